"""Factor matrices of the space-time least-squares system.

The system matrix is ``A = K_t (x) M_s + M_t (x) J_s + W_t (x) L_s``.  Time
factors are dense 1D matrices; spatial factors are physical-domain integrals
assembled by sum factorization: each direction contributes a banded
univariate array ``X[i, a, q] = B^(r)_i(q) B^(s)_{i+a-p}(q) w_q`` and the
coefficient field on the tensor quadrature grid is contracted one direction
at a time.  The reduction order is fixed, so results are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import CoefficientError
from .geometry import GeometryMap, derivative_indices, eval_geometry_grid, laplacian_coefficients
from .kronecker import KronSumOperator, mode_multiply
from .splines import Basis1D, QuadratureGrid, TensorSpace, build_quadrature, greville_abscissae


def default_quadrature(space: TensorSpace, extra: int = 0) -> tuple:
    """p+1 Gauss points per element in every direction (plus ``extra``); time grid last."""
    grids = [build_quadrature(b.kv, b.degree + 1 + extra) for b in space.space]
    grids.append(build_quadrature(space.time.kv, space.time.degree + 1 + extra))
    return tuple(grids)


def _colloc(basis: Basis1D, quad: QuadratureGrid, nderiv: int = 2) -> list:
    """Dense ``[q, i]`` matrices for derivative orders 0..nderiv (zeros above the degree)."""
    first, vals = basis.eval_local(quad.points, nderiv)
    out = []
    rows = np.arange(first.size)[:, None]
    cols = first[:, None] + np.arange(basis.degree + 1)[None, :]
    for r in range(nderiv + 1):
        mat = np.zeros((first.size, basis.m))
        mat[rows, cols] = vals[:, r, :]
        out.append(mat)
    return out


def _banded(B: list, w: np.ndarray, p: int, r: int, s: int) -> np.ndarray:
    """``X[i, a, q] = B_r[q, i] * B_s[q, i + a - p] * w[q]``, zero outside the range."""
    nq, m = B[0].shape
    X = np.zeros((m, 2 * p + 1, nq))
    Br = (B[r] * w[:, None]).T
    Bs = B[s].T
    for a in range(2 * p + 1):
        off = a - p
        lo, hi = max(0, -off), min(m, m - off)
        X[lo:hi, a, :] = Br[lo:hi] * Bs[lo + off:hi + off]
    return X


@dataclass(eq=False)
class SpatialData:
    """Per-quadrature-point geometry data on the spatial tensor grid."""

    space: TensorSpace
    geom: GeometryMap
    quad: tuple
    colloc: list
    absdet: np.ndarray
    weights: np.ndarray
    G: np.ndarray
    h: np.ndarray
    x: np.ndarray
    _bands: dict = field(default_factory=dict)
    _pattern: object = None

    @property
    def dim(self) -> int:
        return self.space.dim

    def band(self, k: int, r: int, s: int) -> np.ndarray:
        key = (k, r, s)
        if key not in self._bands:
            b = self.space.space[k]
            self._bands[key] = _banded(self.colloc[k], self.quad[k].weights, b.degree, r, s)
        return self._bands[key]

    def laplacian_terms(self) -> list:
        """``[(alpha, coefficient)]`` with ``Delta v = sum coefficient * D^alpha v``; zero terms dropped."""
        d = self.dim
        terms = []
        for alpha in derivative_indices(d):
            order = sum(alpha)
            if order == 2:
                idx = [j for j in range(d) for _ in range(alpha[j])]
                j, k = idx
                coef = self.G[..., j, k] * (1.0 if j == k else 2.0)
            elif order == 1:
                coef = self.h[..., alpha.index(1)]
            else:
                continue
            if np.max(np.abs(coef)) > 1e-13 * max(1.0, np.max(np.abs(self.G))):
                terms.append((alpha, coef))
        return terms


def spatial_data(space: TensorSpace, geom: GeometryMap, quad: tuple | None = None) -> SpatialData:
    if quad is None:
        quad = default_quadrature(space)
    squad = quad[: space.dim]
    pd = eval_geometry_grid(geom, [q.points for q in squad])
    G, h = laplacian_coefficients(pd)
    colloc = [_colloc(b, q) for b, q in zip(space.space, squad)]
    w = squad[0].weights
    for q in squad[1:]:
        w = np.multiply.outer(w, q.weights)
    return SpatialData(space, geom, tuple(quad), colloc, np.abs(pd.det), w, G, h, pd.x)


def _contract_band(coef: np.ndarray, bands: list) -> np.ndarray:
    """Contract coefficient grid (nq_1..nq_d) with per-direction bands -> (m_1, b, ..., m_d, b)."""
    arr = coef
    for X in bands:
        arr = np.tensordot(arr, X, axes=([0], [2]))
    return arr


class _BandPattern:
    """Index bookkeeping to turn banded tensors into CSR on the full basis."""

    def __init__(self, sizes: list, degrees: list):
        d = len(sizes)
        rows = np.zeros((), dtype=np.int64)
        cols = np.zeros((), dtype=np.int64)
        valid = np.ones((), dtype=bool)
        stride = 1
        for k in range(d):
            m, p = sizes[k], degrees[k]
            i = np.arange(m)[:, None]
            a = np.arange(2 * p + 1)[None, :]
            j = i + a - p
            ok = (j >= 0) & (j < m)
            # band axes for direction k are appended after previous ones: (..., m_k, b_k)
            rows = np.add.outer(rows, i * stride + 0 * a)
            cols = np.add.outer(cols, np.clip(j, 0, m - 1) * stride)
            valid = np.logical_and.outer(valid, ok)
            stride *= m
        self.n = stride
        self.valid = valid.ravel()
        self.rows = rows.ravel()[self.valid]
        self.cols = cols.ravel()[self.valid]

    def to_csr(self, band: np.ndarray) -> sp.csr_matrix:
        data = band.ravel()[self.valid]
        return sp.csr_matrix((data, (self.rows, self.cols)), shape=(self.n, self.n))


def _pattern(sd: SpatialData) -> _BandPattern:
    if sd._pattern is None:
        sd._pattern = _BandPattern([b.m for b in sd.space.space], [b.degree for b in sd.space.space])
    return sd._pattern


def _form(sd: SpatialData, coef: np.ndarray, alpha, beta) -> np.ndarray:
    bands = [sd.band(k, alpha[k], beta[k]) for k in range(sd.dim)]
    return _contract_band(coef * sd.absdet, bands)


def assemble_space_full(sd: SpatialData, with_coupling: bool = False) -> dict:
    """Full-basis spatial matrices ``M``, ``L``, ``J`` (and ``D = int Delta B_i B_j`` if requested)."""
    d = sd.dim
    zero = (0,) * d
    pat = _pattern(sd)
    out = {"M": pat.to_csr(_form(sd, np.ones_like(sd.absdet), zero, zero))}

    diag = 0.0
    sym = 0.0
    for j in range(d):
        ej = tuple(int(i == j) for i in range(d))
        for k in range(j, d):
            ek = tuple(int(i == k) for i in range(d))
            if j != k and np.max(np.abs(sd.G[..., j, k])) <= 1e-13 * np.max(np.abs(sd.G)):
                continue
            band = _form(sd, sd.G[..., j, k], ej, ek)
            if j == k:
                diag = diag + band
            else:
                sym = sym + band
    L = pat.to_csr(diag)
    if not np.isscalar(sym):
        S = pat.to_csr(sym)
        L = L + S + S.T
    out["L"] = L.tocsr()

    terms = sd.laplacian_terms()
    diag, sym = 0.0, 0.0
    for a, (alpha, ca) in enumerate(terms):
        for b in range(a, len(terms)):
            beta, cb = terms[b]
            band = _form(sd, ca * cb, alpha, beta)
            if a == b:
                diag = diag + band
            else:
                sym = sym + band
    J = pat.to_csr(diag)
    if not np.isscalar(sym):
        S = pat.to_csr(sym)
        J = J + S + S.T
    out["J"] = J.tocsr()

    if with_coupling:
        acc = 0.0
        for alpha, ca in terms:
            acc = acc + _form(sd, ca, alpha, zero)
        out["D"] = pat.to_csr(acc)
    return out


def _free_space_index(space: TensorSpace) -> np.ndarray:
    """Full-basis (colexicographic) indices of the free spatial functions."""
    grids = np.meshgrid(*[np.arange(1, b.m - 1) for b in space.space], indexing="ij")
    return np.ravel_multi_index(tuple(grids), tuple(b.m for b in space.space), order="F").ravel(order="F")


def assemble_space_factors(space: TensorSpace, geom: GeometryMap, quad: tuple | None = None, sd: SpatialData | None = None):
    """Constrained ``(M_s, L_s, J_s)`` as CSR matrices."""
    sd = sd if sd is not None else spatial_data(space, geom, quad)
    full = assemble_space_full(sd)
    idx = _free_space_index(space)
    return tuple(full[k][idx][:, idx].tocsr() for k in ("M", "L", "J"))


def assemble_time_full(basis_t: Basis1D, T: float, quad: QuadratureGrid | None = None) -> dict:
    """Full-basis time matrices in physical time: K, M, W and C = int b_i b_j'."""
    if quad is None:
        quad = build_quadrature(basis_t.kv, basis_t.degree + 1)
    B = _colloc(basis_t, quad, 1)
    w = quad.weights
    K = (B[1] * w[:, None]).T @ B[1] / T
    M = (B[0] * w[:, None]).T @ B[0] * T
    C = (B[0] * w[:, None]).T @ B[1]
    end = basis_t.collocation([1.0])[0]
    W = np.outer(end, end)
    return {"K": 0.5 * (K + K.T), "M": 0.5 * (M + M.T), "W": W, "C": C}


def assemble_time_factors(basis_t: Basis1D, T: float, quad: QuadratureGrid | None = None):
    """Constrained ``(K_t, M_t, W_t)``; the first time function (nonzero at t = 0) is dropped."""
    full = assemble_time_full(basis_t, T, quad)
    return tuple(np.ascontiguousarray(full[k][1:, 1:]) for k in ("K", "M", "W"))


@dataclass(eq=False)
class FactorMatrices:
    K_t: np.ndarray
    M_t: np.ndarray
    W_t: np.ndarray
    M_s: sp.csr_matrix
    L_s: sp.csr_matrix
    J_s: sp.csr_matrix
    space: TensorSpace
    free_space_index: np.ndarray
    full_time: dict = field(default_factory=dict)
    full_space: dict = field(default_factory=dict)

    def operator(self) -> KronSumOperator:
        return KronSumOperator([(self.K_t, self.M_s), (self.M_t, self.J_s), (self.W_t, self.L_s)])

    def full_operator(self) -> KronSumOperator:
        """Original (non-integrated-by-parts) bilinear form on the full basis.

        ``K (x) M + M_t (x) J - C (x) D - C^T (x) D^T``; valid for arbitrary
        boundary/initial values, used for the lifting.
        """
        t, s = self.full_time, self.full_space
        return KronSumOperator([(t["K"], s["M"]), (t["M"], s["J"]),
                                (-t["C"], s["D"]), (-t["C"].T, s["D"].T.tocsr())])


def assemble_factors(space: TensorSpace, geom: GeometryMap, quad: tuple | None = None, sd: SpatialData | None = None,
                     with_coupling: bool = False) -> FactorMatrices:
    if quad is None:
        quad = sd.quad if sd is not None else default_quadrature(space)
    sd = sd if sd is not None else spatial_data(space, geom, quad)
    sfull = assemble_space_full(sd, with_coupling=with_coupling)
    tfull = assemble_time_full(space.time, geom.T, quad[-1])
    idx = _free_space_index(space)
    M_s, L_s, J_s = (sfull[k][idx][:, idx].tocsr() for k in ("M", "L", "J"))
    K_t, M_t, W_t = (np.ascontiguousarray(tfull[k][1:, 1:]) for k in ("K", "M", "W"))
    return FactorMatrices(K_t, M_t, W_t, M_s, L_s, J_s, space, idx, tfull, sfull)


# --------------------------------------------------------------------------- load and lifting

@dataclass(eq=False)
class LoadAndLifting:
    F: np.ndarray
    lifting: np.ndarray
    rhs: np.ndarray


def interpolate_full(space: TensorSpace, geom: GeometryMap, func) -> np.ndarray:
    """Coefficients of the full-basis spline interpolating ``func(x, t)`` at Greville points."""
    gs = [greville_abscissae(b) for b in space.space]
    gt = greville_abscissae(space.time)
    pd = eval_geometry_grid(geom, gs)
    x = np.moveaxis(pd.x, -1, 0).reshape(space.dim, -1, order="F").T
    vals = func(x[:, None, :], geom.T * gt[None, :])
    vals = np.broadcast_to(vals, (x.shape[0], gt.size)).reshape(space.full_shape, order="F")
    coef = np.array(vals)
    for k, (b, g) in enumerate(zip(list(space.space) + [space.time], gs + [gt])):
        coef = mode_multiply(coef, np.linalg.inv(b.collocation(g)), k)
    return coef


def assemble_rhs_and_lifting(space: TensorSpace, geom: GeometryMap, manufactured, quad: tuple | None = None,
                             sd: SpatialData | None = None, factors: FactorMatrices | None = None,
                             chunk_points: int = 2_000_000) -> LoadAndLifting:
    """Load ``F_i = int int f (d_t B_i - Delta B_i)`` and the lifted right-hand side.

    Boundary and initial DOFs are set by Greville interpolation of the exact
    solution; the returned ``rhs`` is ``F - A(lifting, .)`` on the free DOFs.
    """
    if quad is None:
        quad = sd.quad if sd is not None else default_quadrature(space)
    sd = sd if sd is not None else spatial_data(space, geom, quad)
    d = space.dim
    T = geom.T
    tq = quad[-1]
    Bt = _colloc(space.time, tq, 1)
    t_phys = T * tq.points
    # time-contracted source: G0 ~ f * d_t b_i, G1 ~ f * b_i (physical weights)
    x = sd.x.reshape(-1, d)
    nxq = x.shape[0]
    G0 = np.zeros((nxq, space.time.m))
    G1 = np.zeros((nxq, space.time.m))
    step = max(1, chunk_points // max(nxq, 1))
    for start in range(0, tq.n_points, step):
        sl = slice(start, start + step)
        fv = manufactured.f(x[:, None, :], t_phys[None, sl])
        fv = np.broadcast_to(fv, (nxq, t_phys[sl].size))
        w = tq.weights[sl]
        G0 += fv @ (Bt[1][sl] * w[:, None])
        G1 += fv @ (Bt[0][sl] * (w * T)[:, None])
    qshape = sd.absdet.shape
    dw = (sd.absdet * sd.weights)[..., None]
    G0 = G0.reshape(qshape + (-1,)) * dw
    G1 = G1.reshape(qshape + (-1,)) * dw

    def contract(arr, alpha):
        for k in range(d):
            arr = np.tensordot(arr, sd.colloc[k][alpha[k]], axes=([0], [0]))
        # (m_t, m_1, ..., m_d) -> (m_1, ..., m_d, m_t)
        return np.moveaxis(arr, 0, -1)

    Ffull = contract(G0, (0,) * d)
    for alpha, ca in sd.laplacian_terms():
        Ffull = Ffull - contract(G1 * ca[..., None], alpha)
    F = space.restrict(Ffull)

    lifting = np.zeros(space.full_shape)
    if manufactured is not None and not getattr(manufactured, "homogeneous", False):
        full = interpolate_full(space, geom, manufactured.u)
        lifting = full.copy()
        lifting[space.free_slices()] = 0.0
    rhs = F
    if np.any(lifting != 0.0):
        if factors is None or "D" not in factors.full_space:
            factors = assemble_factors(space, geom, quad, sd, with_coupling=True)
        Ag = factors.full_operator().apply(np.ravel(lifting, order="F"))
        rhs = F - space.restrict(np.reshape(Ag, space.full_shape, order="F"))
    return LoadAndLifting(F, lifting, rhs)


# --------------------------------------------------------------------------- parametric factors

@dataclass(eq=False)
class ParametricFactors:
    """Univariate factors of the preconditioner on [0, 1] (constrained bases)."""

    K_t: np.ndarray
    M_t: np.ndarray
    J: list
    M: list


def _weighted_1d(basis: Basis1D, quad: QuadratureGrid, weight, r: int, sl: slice) -> np.ndarray:
    B = _colloc(basis, quad, r)[r][:, sl]
    w = quad.weights if weight is None else quad.weights * weight
    mat = (B * w[:, None]).T @ B
    return 0.5 * (mat + mat.T)


def assemble_parametric_factors(space: TensorSpace, coeffs=None, quad: tuple | None = None) -> ParametricFactors:
    """``K^_t, M^_t`` and per-direction ``J^_k, M^_k``; weighted by ``coeffs`` when given.

    ``coeffs`` is a :class:`~stiga.fd_precond.SeparableCoefficient` whose
    samples live on the same quadrature points.
    """
    if quad is None:
        quad = coeffs.quad if coeffs is not None else default_quadrature(space)
    if coeffs is not None:
        for name, arr in coeffs.samples():
            if np.any(~(np.asarray(arr) > 0)):
                raise CoefficientError(f"coefficient {name} has nonpositive samples")
    d = space.dim
    tq = quad[-1]
    tsl = slice(1, space.time.m)
    mu_t = None if coeffs is None else coeffs.mu_t
    om_t = None if coeffs is None else coeffs.omega_t
    K_t = _weighted_1d(space.time, tq, om_t, 1, tsl)
    M_t = _weighted_1d(space.time, tq, mu_t, 0, tsl)
    J, M = [], []
    for k in range(d):
        b = space.space[k]
        sl = slice(1, b.m - 1)
        mu = None if coeffs is None else coeffs.mu[k]
        om = None if coeffs is None else coeffs.omega[k]
        J.append(_weighted_1d(b, quad[k], om, 2, sl))
        M.append(_weighted_1d(b, quad[k], mu, 0, sl))
    return ParametricFactors(K_t, M_t, J, M)


# --------------------------------------------------------------------------- triplet export

def dumps_triplets(matrix) -> str:
    """Sparse triplet text: header, shape line, then ``row col value`` (0-based, repr floats)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = ["stiga-triplets 1", f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    lines += [f"{r} {c} {v!r}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order].tolist())]
    return "\n".join(lines) + "\n"


def loads_triplets(text: str) -> sp.csr_matrix:
    rows = text.splitlines()
    if rows[0].split()[0] != "stiga-triplets":
        raise ValueError("not a triplet file")
    n, m, nnz = (int(v) for v in rows[1].split())
    data = [ln.split() for ln in rows[2: 2 + nnz]]
    r = np.array([int(a[0]) for a in data], dtype=np.int64)
    c = np.array([int(a[1]) for a in data], dtype=np.int64)
    v = np.array([float(a[2]) for a in data])
    return sp.csr_matrix((v, (r, c)), shape=(n, m))


def export_factors(factors: FactorMatrices, directory) -> list:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("K_t", "M_t", "W_t", "M_s", "L_s", "J_s"):
        path = directory / f"{name}.txt"
        path.write_text(dumps_triplets(getattr(factors, name)))
        written.append(path)
    return written
