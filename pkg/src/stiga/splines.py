"""Univariate and tensor-product B-spline machinery.

Knot vectors are open and live in [0, 1].  Basis functions are evaluated
element-wise (only the ``p + 1`` functions active on a knot span), and the
dense ``[point, function, derivative]`` layout is assembled from that.

Tensor-product spaces use colexicographic flattening: spatial direction 1
varies fastest, time slowest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import ArgumentError, DomainError

_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector of degree ``degree`` on [0, 1]."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ArgumentError(f"degree must be nonnegative, got {p}")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ArgumentError("knot vector too short for its degree")
        if np.any(np.diff(knots) < 0):
            raise ArgumentError("knots must be nondecreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ArgumentError("knot vector must span [0, 1]")
        if np.any(knots[: p + 1] != 0.0) or np.any(knots[-(p + 1):] != 1.0):
            raise ArgumentError("knot vector must be open (end knots repeated p+1 times)")
        if np.any(knots[p + 1: -(p + 1)] == 0.0) or np.any(knots[p + 1: -(p + 1)] == 1.0):
            raise ArgumentError("end knots repeated more than p+1 times")
        knots.setflags(write=False)

    @property
    def m(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    @property
    def meshsize(self) -> float:
        return float(np.max(np.diff(self.breakpoints)))

    def quasi_uniformity(self) -> float:
        """Ratio min/max of the nonempty knot spans (the alpha of quasi-uniformity)."""
        spans = np.diff(self.breakpoints)
        return float(spans.min() / spans.max())

    def max_interior_multiplicity(self) -> int:
        inner = self.knots[self.degree + 1: -(self.degree + 1)]
        if inner.size == 0:
            return 0
        _, counts = np.unique(inner, return_counts=True)
        return int(counts.max())

    def find_span(self, x) -> np.ndarray:
        """Index ``mu`` with ``knots[mu] <= x < knots[mu+1]``; x = 1 maps to the last span."""
        x = np.asarray(x, dtype=float)
        span = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(span, self.degree, self.m - 1)


def uniform_knots(degree: int, n_elements: int, multiplicity: int = 1) -> KnotVector:
    """Open uniform knot vector with ``n_elements`` spans and interior multiplicity."""
    if n_elements < 1:
        raise ArgumentError("need at least one element")
    if not 1 <= multiplicity <= degree + 1:
        raise ArgumentError("interior multiplicity must be in [1, p+1]")
    interior = np.repeat(np.linspace(0.0, 1.0, n_elements + 1)[1:-1], multiplicity)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(degree, knots)


def _local_ders(knots: np.ndarray, p: int, span: np.ndarray, x: np.ndarray, n: int) -> np.ndarray:
    """Derivatives 0..n of the p+1 active B-splines, shape (npts, n+1, p+1).

    Vectorised over points; follows the triangular-table formulation of the
    Cox-de Boor recursion.  Orders above p are zero.
    """
    npts = x.size
    ndu = np.zeros((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npts, p + 1))
    right = np.zeros((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, n + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    nn = min(n, p)
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = np.zeros((npts, 2, p + 1))
        a[:, 0, 0] = 1.0
        for k in range(1, nn + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, nn + 1):
        ders[:, k, :] *= factor
        factor *= p - k
    return ders


@dataclass(frozen=True, eq=False)
class Basis1D:
    """Univariate B-spline basis attached to a knot vector."""

    kv: KnotVector

    @property
    def degree(self) -> int:
        return self.kv.degree

    @property
    def m(self) -> int:
        return self.kv.m

    def eval_local(self, points, nderiv: int = 0):
        """Active-function evaluation.

        Returns ``(first, vals)`` where ``first[q]`` is the global index of the
        first active function at ``points[q]`` and ``vals`` has shape
        ``(npts, nderiv + 1, p + 1)``.  Derivative orders above p are zero.
        """
        x = np.atleast_1d(np.asarray(points, dtype=float))
        if np.any(x < -_EPS) or np.any(x > 1.0 + _EPS):
            raise DomainError("evaluation points must lie in [0, 1]")
        x = np.clip(x, 0.0, 1.0)
        span = self.kv.find_span(x)
        vals = _local_ders(self.kv.knots, self.degree, span, x, nderiv)
        return span - self.degree, vals

    def collocation(self, points, deriv: int = 0) -> np.ndarray:
        """Dense matrix ``[q, i]`` of the ``deriv``-th derivative of function i at points[q]."""
        first, vals = self.eval_local(points, deriv)
        npts = first.size
        out = np.zeros((npts, self.m))
        cols = first[:, None] + np.arange(self.degree + 1)[None, :]
        out[np.arange(npts)[:, None], cols] = vals[:, deriv, :]
        return out


def eval_basis(basis: Basis1D, points, max_deriv: int = 0) -> np.ndarray:
    """Dense evaluation, array ``[point, function, derivative order]``."""
    if max_deriv not in (0, 1, 2):
        raise ArgumentError("max_deriv must be 0, 1 or 2")
    if max_deriv > basis.degree:
        raise ArgumentError(f"max_deriv={max_deriv} exceeds degree {basis.degree}")
    first, vals = basis.eval_local(points, max_deriv)
    npts = first.size
    out = np.zeros((npts, basis.m, max_deriv + 1))
    cols = first[:, None] + np.arange(basis.degree + 1)[None, :]
    rows = np.arange(npts)[:, None]
    for r in range(max_deriv + 1):
        out[rows, cols, r] = vals[:, r, :]
    return out


def greville_abscissae(basis: Basis1D) -> np.ndarray:
    """Knot averages ``(xi_{i+1} + ... + xi_{i+p}) / p``; degree 0 uses span midpoints."""
    kv = basis.kv
    p, t = kv.degree, kv.knots
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    csum = np.concatenate([[0.0], np.cumsum(t)])
    idx = np.arange(kv.m)
    g = (csum[idx + p + 1] - csum[idx + 1]) / p
    return np.clip(g, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Gauss-Legendre points on every nonempty span of one knot vector."""

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray
    intervals: np.ndarray
    points_per_element: int

    @property
    def n_points(self) -> int:
        return self.points.size

    @property
    def n_elements(self) -> int:
        return self.intervals.shape[0]


def build_quadrature(knots: KnotVector, points_per_element: int) -> QuadratureGrid:
    if points_per_element < 1:
        raise ArgumentError("points_per_element must be >= 1")
    bp = knots.breakpoints
    intervals = np.column_stack([bp[:-1], bp[1:]])
    intervals = intervals[intervals[:, 1] > intervals[:, 0]]
    xg, wg = np.polynomial.legendre.leggauss(points_per_element)
    a, b = intervals[:, 0:1], intervals[:, 1:2]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * wg[None, :]
    nel = intervals.shape[0]
    element = np.repeat(np.arange(nel), points_per_element)
    return QuadratureGrid(pts.ravel(), wts.ravel(), element, intervals, points_per_element)


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Space-time tensor-product space with boundary and initial DOFs removed.

    Spatial functions with index 0 or m_k - 1 (nonzero on the boundary) and the
    first time function (nonzero at t = 0) are constrained.
    """

    space: tuple
    time: Basis1D
    _shape: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "space", tuple(self.space))
        for b in self.space:
            if b.m < 3:
                raise ArgumentError("each spatial basis needs at least 3 functions")
        object.__setattr__(self, "_shape", tuple(b.m - 2 for b in self.space) + (self.time.m - 1,))

    @property
    def dim(self) -> int:
        return len(self.space)

    @property
    def n_space(self) -> tuple:
        return self._shape[:-1]

    @property
    def n_t(self) -> int:
        return self._shape[-1]

    @property
    def N_s(self) -> int:
        return int(np.prod(self.n_space))

    @property
    def N_dof(self) -> int:
        return self.N_s * self.n_t

    @property
    def shape(self) -> tuple:
        """Free-DOF tensor shape ``(n_1, ..., n_d, n_t)``."""
        return self._shape

    @property
    def full_shape(self) -> tuple:
        return tuple(b.m for b in self.space) + (self.time.m,)

    def free_slices(self) -> tuple:
        return tuple(slice(1, b.m - 1) for b in self.space) + (slice(1, self.time.m),)

    def unflatten(self, v: np.ndarray) -> np.ndarray:
        """Vector -> tensor indexed ``[i_1, ..., i_d, i_t]`` (colexicographic)."""
        return np.reshape(v, self.shape, order="F")

    def flatten(self, tensor: np.ndarray) -> np.ndarray:
        return np.reshape(tensor, -1, order="F")

    def multi_index(self, flat):
        return np.unravel_index(flat, self.shape, order="F")

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(multi, self.shape, order="F")

    def embed(self, v: np.ndarray, lifting: np.ndarray | None = None) -> np.ndarray:
        """Free coefficient vector -> full coefficient tensor (boundary/initial from lifting)."""
        full = np.zeros(self.full_shape) if lifting is None else np.array(lifting, dtype=float)
        full[self.free_slices()] += self.unflatten(v)
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return self.flatten(np.asarray(full)[self.free_slices()])


def make_space(degree_space: int, degree_time: int, n_elements, dim: int) -> TensorSpace:
    """Uniform space-time space with ``n_elements`` spans per direction (int or sequence)."""
    if np.isscalar(n_elements):
        n_elements = [int(n_elements)] * (dim + 1)
    n_elements = list(n_elements)
    if len(n_elements) != dim + 1:
        raise ArgumentError("need one element count per space-time direction")
    space = tuple(Basis1D(uniform_knots(degree_space, n)) for n in n_elements[:-1])
    time = Basis1D(uniform_knots(degree_time, n_elements[-1]))
    return TensorSpace(space, time)
