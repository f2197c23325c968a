"""Tensor-product (optionally rational) geometry maps and their derivatives.

A :class:`GeometryMap` is ``F: [0,1]^d -> Omega`` together with a final time
``T``; the space-time map is ``G(eta, tau) = (F(eta), T * tau)``.  Evaluation
returns the physical point, Jacobian, its inverse and determinant, the
geometry Hessian and the parametric derivatives of the inverse Jacobian,
which is everything needed for physical gradients and Laplacians of
push-forward functions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError, DomainError, SingularGeometryError
from .splines import Basis1D, KnotVector

DET_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class GeometryMap:
    knots: tuple
    control: np.ndarray
    weights: np.ndarray | None = None
    T: float = 1.0

    def __post_init__(self):
        knots = tuple(self.knots)
        object.__setattr__(self, "knots", knots)
        control = np.asarray(self.control, dtype=float)
        object.__setattr__(self, "control", control)
        d = len(knots)
        shape = tuple(kv.m for kv in knots)
        if control.shape != shape + (d,):
            raise ArgumentError(f"control grid shape {control.shape} does not match {shape + (d,)}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != shape:
                raise ArgumentError("weights shape does not match control grid")
            if np.any(w <= 0):
                raise ArgumentError("weights must be strictly positive")
            object.__setattr__(self, "weights", w)
        if not self.T > 0:
            raise ArgumentError("final time T must be positive")

    @property
    def dim(self) -> int:
        return len(self.knots)

    @property
    def degrees(self) -> tuple:
        return tuple(kv.degree for kv in self.knots)

    @property
    def rational(self) -> bool:
        return self.weights is not None

    def homogeneous_net(self) -> np.ndarray:
        """Control net in homogeneous coordinates ``(w x, w)``, shape (m_1..m_d, d+1)."""
        w = np.ones(self.control.shape[:-1]) if self.weights is None else self.weights
        return np.concatenate([self.control * w[..., None], w[..., None]], axis=-1)

    def with_time(self, T: float) -> "GeometryMap":
        return GeometryMap(self.knots, self.control, self.weights, T)


@dataclass(frozen=True, eq=False)
class PhysDerivs:
    """Geometry quantities at one point or on a grid (leading axes index points).

    ``d_jac_inv[..., k, :, :]`` is the derivative of ``jac_inv`` w.r.t. eta_k;
    ``hessian[..., a, j, k]`` is d^2 F_a / d eta_j d eta_k.
    """

    x: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    jac_inv: np.ndarray
    d_jac_inv: np.ndarray
    hessian: np.ndarray


def derivative_indices(d: int, order: int = 2) -> list:
    """Multi-indices of total order <= ``order`` in d variables, sorted by order."""
    out = []
    for n in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(d), n):
            alpha = [0] * d
            for j in combo:
                alpha[j] += 1
            out.append(tuple(alpha))
    return out


def _check_param(points: np.ndarray):
    if np.any(points < -1e-14) or np.any(points > 1 + 1e-14):
        raise DomainError("parametric point outside the unit cube")


def _homogeneous_grid(gmap: GeometryMap, coords) -> dict:
    """Derivatives of homogeneous coordinates on a tensor grid, keyed by multi-index."""
    d = gmap.dim
    mats = []
    for kv, c in zip(gmap.knots, coords):
        c = np.asarray(c, dtype=float)
        _check_param(c)
        b = Basis1D(kv)
        mats.append(np.stack([b.collocation(c, r) if r <= kv.degree else np.zeros((c.size, kv.m))
                              for r in range(3)]))
    net = gmap.homogeneous_net()
    out = {}
    for alpha in derivative_indices(d):
        arr = net
        for k in range(d):
            # contract parametric axis k with the univariate matrix
            arr = np.moveaxis(np.tensordot(mats[k][alpha[k]], arr, axes=([1], [k])), 0, k)
        out[alpha] = arr
    return out


def _homogeneous_points(gmap: GeometryMap, points: np.ndarray) -> dict:
    d = gmap.dim
    _check_param(points)
    mats = []
    for k, kv in enumerate(gmap.knots):
        b = Basis1D(kv)
        c = points[:, k]
        mats.append([b.collocation(c, r) if r <= kv.degree else np.zeros((c.size, kv.m))
                     for r in range(3)])
    net = gmap.homogeneous_net()
    letters = "abcdefg"[:d]
    spec = ",".join(f"n{letters[k]}" for k in range(d)) + f",{letters}z->nz"
    out = {}
    for alpha in derivative_indices(d):
        out[alpha] = np.einsum(spec, *[mats[k][alpha[k]] for k in range(d)], net)
    return out


def _assemble_derivs(hom: dict, d: int, rational: bool = True) -> PhysDerivs:
    e = [tuple(1 if i == j else 0 for i in range(d)) for j in range(d)]
    zero = (0,) * d
    if not rational:
        # weights are identically one: drop the (round-off only) weight derivatives
        hom = {a: v.copy() for a, v in hom.items()}
        for a, v in hom.items():
            v[..., d] = 1.0 if a == zero else 0.0
    A0, W0 = hom[zero][..., :d], hom[zero][..., d]
    F = A0 / W0[..., None]
    Fj = []
    for j in range(d):
        Aj, Wj = hom[e[j]][..., :d], hom[e[j]][..., d]
        Fj.append((Aj - F * Wj[..., None]) / W0[..., None])
    jac = np.stack(Fj, axis=-1)
    hess = np.zeros(F.shape + (d, d))
    for j in range(d):
        for k in range(j, d):
            alpha = tuple(np.add(e[j], e[k]))
            Ajk, Wjk = hom[alpha][..., :d], hom[alpha][..., d]
            Wj, Wk = hom[e[j]][..., d], hom[e[k]][..., d]
            val = (Ajk - Fj[j] * Wk[..., None] - Fj[k] * Wj[..., None] - F * Wjk[..., None]) / W0[..., None]
            hess[..., j, k] = val
            hess[..., k, j] = val
    det = np.linalg.det(jac)
    if np.any(np.abs(det) < DET_TOL) or not np.all(np.isfinite(det)):
        raise SingularGeometryError(f"|det J_F| below {DET_TOL} (min {np.min(np.abs(det)):.3e})")
    jinv = np.linalg.inv(jac)
    # d(J^{-1})/d eta_k = -J^{-1} (dJ/d eta_k) J^{-1}, dJ/d eta_k = hess[..., :, :, k]
    djinv = -np.einsum("...ab,...bck,...cd->...kad", jinv, hess, jinv)
    return PhysDerivs(F, jac, det, jinv, djinv, hess)


def eval_geometry(gmap: GeometryMap, eta) -> PhysDerivs:
    """Geometry quantities at a single parametric point."""
    eta = np.asarray(eta, dtype=float).reshape(1, gmap.dim)
    pd = _assemble_derivs(_homogeneous_points(gmap, eta), gmap.dim, gmap.rational)
    return PhysDerivs(*(getattr(pd, f)[0] for f in ("x", "jac", "det", "jac_inv", "d_jac_inv", "hessian")))


def eval_geometry_points(gmap: GeometryMap, points) -> PhysDerivs:
    """Geometry quantities at scattered points, array shape (npts, d)."""
    pts = np.asarray(points, dtype=float).reshape(-1, gmap.dim)
    return _assemble_derivs(_homogeneous_points(gmap, pts), gmap.dim, gmap.rational)


def eval_geometry_grid(gmap: GeometryMap, coords) -> PhysDerivs:
    """Geometry quantities on the tensor grid ``coords[0] x ... x coords[d-1]``."""
    if len(coords) != gmap.dim:
        raise ArgumentError("need one coordinate array per parametric direction")
    return _assemble_derivs(_homogeneous_grid(gmap, coords), gmap.dim, gmap.rational)


def physical_gradient(grad_hat: np.ndarray, derivs: PhysDerivs) -> np.ndarray:
    """grad_x v = J^{-T} grad_eta v; ``grad_hat`` has shape (..., nfun, d)."""
    return np.einsum("...ji,...fj->...fi", derivs.jac_inv, grad_hat)


def physical_second_derivative(grad_hat: np.ndarray, hess_hat: np.ndarray, derivs: PhysDerivs, i: int) -> np.ndarray:
    """d^2 (v o F^{-1}) / d x_i^2 for each function.

    ``grad_hat``: (..., nfun, d) parametric gradients; ``hess_hat``:
    (..., nfun, d, d) parametric Hessians; leading axes match ``derivs``.
    """
    jinv, djinv = derivs.jac_inv, derivs.d_jac_inv
    col = jinv[..., :, i]
    second = np.einsum("...fjk,...k,...j->...f", hess_hat, col, col)
    # first-order term: sum_j v_j d[J^{-1}]_{ji}/dx_i, with d/dx_i = sum_k [J^{-1}]_{ki} d/deta_k
    dcol = np.einsum("...k,...kj->...j", col, djinv[..., :, :, i])
    return second + np.einsum("...fj,...j->...f", grad_hat, dcol)


def laplacian_coefficients(derivs: PhysDerivs):
    """Coefficients with ``Delta v = sum_jk G_jk v_jk + sum_j h_j v_j`` (parametric derivatives)."""
    jinv, djinv = derivs.jac_inv, derivs.d_jac_inv
    G = np.einsum("...ji,...ki->...jk", jinv, jinv)
    h = np.einsum("...ki,...kji->...j", jinv, djinv)
    return G, h


# --------------------------------------------------------------------------- domains

def _linear_kv() -> KnotVector:
    return KnotVector(1, [0.0, 0.0, 1.0, 1.0])


def _quad_kv() -> KnotVector:
    return KnotVector(2, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0])


def box(lengths, T: float = 1.0) -> GeometryMap:
    """Axis-aligned box ``[0, L_1] x ... x [0, L_d]`` as an affine degree-1 map."""
    lengths = np.asarray(lengths, dtype=float)
    d = lengths.size
    grids = np.meshgrid(*[np.array([0.0, L]) for L in lengths], indexing="ij")
    control = np.stack(grids, axis=-1)
    return GeometryMap(tuple(_linear_kv() for _ in range(d)), control, None, T)


def quarter_annulus(r_in: float = 1.0, r_out: float = 2.0, T: float = 1.0) -> GeometryMap:
    """First-quadrant annulus; eta_1 radial (degree 1), eta_2 angular (rational degree 2)."""
    s = np.sqrt(0.5)
    control = np.zeros((2, 3, 2))
    weights = np.zeros((2, 3))
    for i, r in enumerate((r_in, r_out)):
        control[i] = [[r, 0.0], [r, r], [0.0, r]]
        weights[i] = [1.0, s, 1.0]
    return GeometryMap((_linear_kv(), _quad_kv()), control, weights, T)


def rotated_quarter_annulus(T: float = 1.0) -> GeometryMap:
    """The quarter annulus revolved by pi/2 about the line {y = -1, z = 0}.

    eta_3 is the revolution angle; the arc is an exact rational quadratic.
    """
    base = quarter_annulus()
    s = np.sqrt(0.5)
    control = np.zeros((2, 3, 3, 3))
    weights = np.zeros((2, 3, 3))
    for i in range(2):
        for j in range(3):
            x, y = base.control[i, j]
            rho = y + 1.0
            control[i, j] = [[x, y, 0.0], [x, -1.0 + rho, rho], [x, -1.0, rho]]
            weights[i, j] = base.weights[i, j] * np.array([1.0, s, 1.0])
    return GeometryMap((_linear_kv(), _quad_kv(), _quad_kv()), control, weights, T)


DOMAINS = {
    "unit_square": lambda T: box([1.0, 1.0], T),
    "unit_cube": lambda T: box([1.0, 1.0, 1.0], T),
    "quarter_annulus_2d": lambda T: quarter_annulus(T=T),
    "rotated_quarter_annulus_3d": lambda T: rotated_quarter_annulus(T=T),
}


def make_domain(name: str, T: float = 1.0) -> GeometryMap:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise ArgumentError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    return factory(T)


# --------------------------------------------------------------------------- text I/O

def dumps_geometry(gmap: GeometryMap) -> str:
    """Serialize to the plain-text geometry format (floats written with repr)."""
    lines = ["stiga-geometry 1", f"dim {gmap.dim}", f"final_time {gmap.T!r}",
             "degrees " + " ".join(str(p) for p in gmap.degrees)]
    for kv in gmap.knots:
        lines.append("knots " + " ".join(repr(float(k)) for k in kv.knots))
    lines.append(f"rational {int(gmap.rational)}")
    net = gmap.control.reshape(-1, gmap.dim, order="F")
    w = gmap.weights.reshape(-1, order="F") if gmap.rational else None
    lines.append(f"points {net.shape[0]}")
    for n in range(net.shape[0]):
        row = [repr(float(c)) for c in net[n]]
        if w is not None:
            row.append(repr(float(w[n])))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def loads_geometry(text: str) -> GeometryMap:
    """Parse the format written by :func:`dumps_geometry`.

    Control points are listed colexicographically (first index fastest), one
    per line, followed by the weight when ``rational 1``.
    """
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    it = iter(rows)
    head = next(it)
    if head[:1] != ["stiga-geometry"]:
        raise ArgumentError("not a geometry file")
    dim = int(next(it)[1])
    T = float(next(it)[1])
    degrees = [int(v) for v in next(it)[1:]]
    knots = []
    for k in range(dim):
        row = next(it)
        if row[0] != "knots":
            raise ArgumentError("expected knots line")
        knots.append(KnotVector(degrees[k], [float(v) for v in row[1:]]))
    rational = bool(int(next(it)[1]))
    npts = int(next(it)[1])
    data = np.array([[float(v) for v in next(it)] for _ in range(npts)])
    shape = tuple(kv.m for kv in knots)
    control = data[:, :dim].reshape(shape + (dim,), order="F")
    weights = data[:, dim].reshape(shape, order="F") if rational else None
    return GeometryMap(tuple(knots), control, weights, T)


def save_geometry(gmap: GeometryMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_geometry(gmap))


def load_geometry(path) -> GeometryMap:
    with open(path) as fh:
        return loads_geometry(fh.read())
