"""Space-time least-squares isogeometric solver for the heat equation."""

__version__ = "0.1.0"
