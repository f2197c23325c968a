"""Fast Diagonalization preconditioner for the space-time system.

``P = K^_t (x) M^_s + M^_t (x) J~_s`` with ``M^_s = M^_d (x) ... (x) M^_1`` and
``J~_s`` the Kronecker sum of the ``J^_k``.  With the generalized eigenpairs
``J^_k U_k = M^_k U_k L_k`` and ``K^_t U_t = M^_t U_t L_t`` one has
``P^{-1} = (U_t (x) U_s) (L_t (x) I + I (x) L_s)^{-1} (U_t (x) U_s)^T``,
applied by mode products on the DOF tensor.

The geometry-aware variant weights the univariate factors with a separable
approximation of the metric coefficients and wraps the result in the
diagonal scaling ``D^{1/2} P D^{1/2}``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import ParametricFactors, default_quadrature
from .exceptions import ArgumentError, CoefficientError, NotSPDError, NumericalError, ScalingError
from .geometry import GeometryMap, eval_geometry_grid
from .kronecker import FlopCounter, kron_all, mode_multiply
from .splines import TensorSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GeneralizedEigenPair:
    U: np.ndarray
    lam: np.ndarray

    def residual(self, K: np.ndarray, M: np.ndarray) -> float:
        """``||K U - M U diag(lam)|| / ||K||`` (Frobenius)."""
        R = K @ self.U - M @ self.U * self.lam[None, :]
        return float(np.linalg.norm(R) / max(np.linalg.norm(K), np.finfo(float).tiny))


def generalized_eig(K: np.ndarray, M: np.ndarray, counter: FlopCounter | None = None) -> GeneralizedEigenPair:
    """Solve ``K U = M U diag(lam)`` with ``U^T M U = I`` by Cholesky reduction."""
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or M.shape != (n, n):
        raise ArgumentError("pencil matrices must be square and of equal size")
    try:
        L = sla.cholesky(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"mass matrix of the pencil is not SPD: {exc}") from exc
    Y = sla.solve_triangular(L, K, lower=True)
    C = sla.solve_triangular(L, Y.T, lower=True)
    C = 0.5 * (C + C.T)
    try:
        lam, Q = sla.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed: {exc}", payload={"K": K, "M": M}) from exc
    U = sla.solve_triangular(L.T, Q, lower=False)
    if counter is not None:
        # nominal LAPACK counts: Cholesky n^3/3, two triangular solves 2n^3,
        # tridiagonal reduction and QR with vectors ~ 9n^3, back substitution n^3
        counter.add("eig_setup", int(round((1 / 3 + 2 + 9 + 1) * n ** 3)))
    return GeneralizedEigenPair(U, lam)


@dataclass(eq=False)
class SeparableCoefficient:
    """Univariate factors approximating the metric coefficients.

    ``c_tau ~ mu_1 ... mu_d omega_t`` and
    ``c_k ~ mu_1 ... omega_k ... mu_d mu_t``.  ``mu``/``omega`` hold samples at
    the univariate quadrature points of ``quad``; ``*_mid`` are the
    element-midpoint values the fit was computed from.
    """

    mu: list
    omega: list
    mu_t: np.ndarray
    omega_t: np.ndarray
    quad: tuple
    mu_mid: list
    omega_mid: list
    mu_t_const: float
    omega_t_const: float
    residual: dict = field(default_factory=dict)
    sweeps: int = 0

    def samples(self):
        for k, arr in enumerate(self.mu):
            yield f"mu_{k + 1}", arr
        for k, arr in enumerate(self.omega):
            yield f"omega_{k + 1}", arr
        yield "mu_t", self.mu_t
        yield "omega_t", self.omega_t

    def max_residual(self) -> float:
        return max(self.residual.values()) if self.residual else 0.0


def metric_coefficients(geom: GeometryMap, coords) -> tuple:
    """``c_tau = |det J| / T`` and ``c_k = |grad eta_k|^4 |det J| T`` on a tensor grid.

    ``grad eta_k`` is row k of ``J^{-1}``: the squared norm is the diagonal
    of ``J^{-1} J^{-T}``, which multiplies ``d^2/d eta_k^2`` in the
    physical Laplacian.
    """
    pd = eval_geometry_grid(geom, coords)
    adet = np.abs(pd.det)
    row_norm2 = np.einsum("...ki,...ki->...k", pd.jac_inv, pd.jac_inv)
    c_tau = adet / geom.T
    c_k = [row_norm2[..., k] ** 2 * adet * geom.T for k in range(geom.dim)]
    return c_tau, c_k


def _fit_rank_one(log_tau: np.ndarray, log_k: list, tol: float, max_sweeps: int):
    """Block coordinate descent in log space for the shared-factor model.

    Model: ``log c_tau = sum_j a_j + t_omega`` and
    ``log c_k = sum_{j != k} a_j + b_k`` (``mu_t`` fixed to 1).
    Each sweep replaces one univariate factor by the mean residual over the
    slices it owns, i.e. a geometric-mean update of the factor.
    """
    d = log_tau.ndim
    shape = log_tau.shape
    a = [np.zeros(n) for n in shape]
    b = [np.zeros(n) for n in shape]
    t_om = 0.0

    def expand(vec, j):
        s = [1] * d
        s[j] = vec.size
        return vec.reshape(s)

    def model_tau():
        return sum(expand(a[j], j) for j in range(d)) + t_om

    def model_k(k):
        return sum(expand(a[j], j) for j in range(d) if j != k) + expand(b[k], k)

    def axes_except(j):
        return tuple(i for i in range(d) if i != j)

    prev = None
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        t_om = float(np.mean(log_tau - (model_tau() - t_om)))
        for j in range(d):
            resid = [np.mean(log_tau - (model_tau() - expand(a[j], j)), axis=axes_except(j))]
            for k in range(d):
                if k != j:
                    resid.append(np.mean(log_k[k] - (model_k(k) - expand(a[j], j)), axis=axes_except(j)))
            a[j] = np.mean(resid, axis=0)
            if d == 1:
                a[j] = a[j].reshape(-1)
        for k in range(d):
            b[k] = np.mean(log_k[k] - (model_k(k) - expand(b[k], k)), axis=axes_except(k)).reshape(-1)
        current = np.concatenate([np.ravel(model_tau())] + [np.ravel(model_k(k)) for k in range(d)])
        if prev is not None:
            change = np.max(np.abs(np.expm1(current - prev)))
            if change < tol:
                break
        prev = current
    return a, b, t_om, model_tau(), [model_k(k) for k in range(d)], sweeps


def _interp_positive(mid: np.ndarray, vals: np.ndarray, pts: np.ndarray) -> np.ndarray:
    if mid.size == 1:
        return np.full(pts.shape, vals[0])
    return np.interp(pts, mid, vals)


def separable_approx(geom: GeometryMap, space: TensorSpace, T: float | None = None, quad: tuple | None = None,
                     tol: float = 1e-8, max_sweeps: int = 50) -> SeparableCoefficient:
    """Separable approximation of the metric coefficients from element midpoints.

    Samples ``c_tau`` and ``c_k`` at the midpoints of the spatial elements,
    fits univariate factors by alternating geometric-mean sweeps, and extends
    them to the quadrature points by piecewise-linear interpolation.
    """
    if T is not None and T != geom.T:
        geom = geom.with_time(T)
    if quad is None:
        quad = default_quadrature(space)
    d = space.dim
    mids = [0.5 * (b.kv.breakpoints[:-1] + b.kv.breakpoints[1:]) for b in space.space]
    c_tau, c_k = metric_coefficients(geom, mids)
    for name, arr in [("c_tau", c_tau)] + [(f"c_{k + 1}", c) for k, c in enumerate(c_k)]:
        if np.any(~(arr > 0)):
            raise CoefficientError(f"{name} has a nonpositive midpoint sample")
    a, b, t_om, fit_tau, fit_k, sweeps = _fit_rank_one(np.log(c_tau), [np.log(c) for c in c_k], tol, max_sweeps)

    residual = {"c_tau": float(np.max(np.abs(np.expm1(fit_tau - np.log(c_tau)))))}
    for k in range(d):
        residual[f"c_{k + 1}"] = float(np.max(np.abs(np.expm1(fit_k[k] - np.log(c_k[k])))))

    mu_mid = [np.exp(v) for v in a]
    om_mid = [np.exp(v) for v in b]
    mu = [_interp_positive(mids[k], mu_mid[k], quad[k].points) for k in range(d)]
    om = [_interp_positive(mids[k], om_mid[k], quad[k].points) for k in range(d)]
    nt = quad[-1].n_points
    omega_t_const = float(np.exp(t_om))
    log.debug("separable approximation: %d sweeps, residuals %s", sweeps, residual)
    return SeparableCoefficient(mu, om, np.ones(nt), np.full(nt, omega_t_const), tuple(quad), mu_mid, om_mid,
                                1.0, omega_t_const, residual, sweeps)


@dataclass(eq=False)
class FDPreconditioner:
    """Fast Diagonalization solver for ``P s = r`` (optionally diagonally scaled).

    Internal tensors use C order with reversed axes ``[i_t, i_d, ..., i_1]``,
    which is the colexicographic vector reshaped without copying.
    """

    space_pairs: list
    time_pair: GeneralizedEigenPair
    shape: tuple
    inv_diag: np.ndarray
    sqrt_scaling: np.ndarray | None = None
    counter: FlopCounter = field(default_factory=FlopCounter)
    setup_time: float = 0.0
    eig_residuals: dict = field(default_factory=dict)
    factors: ParametricFactors | None = None

    @property
    def dim(self) -> int:
        return len(self.space_pairs)

    @property
    def n_dof(self) -> int:
        return int(np.prod(self.shape))

    def _rev_shape(self):
        return tuple(reversed(self.shape))

    def _transform(self, X: np.ndarray, transpose: bool) -> np.ndarray:
        d = self.dim
        X = mode_multiply(X, self.time_pair.U.T if transpose else self.time_pair.U, 0, self.counter, "fd_transform")
        for k in range(d):
            U = self.space_pairs[k].U
            X = mode_multiply(X, U.T if transpose else U, d - k, self.counter, "fd_transform")
        return X

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n_dof,):
            raise ArgumentError(f"residual of length {r.size} does not match {self.n_dof}")
        if self.sqrt_scaling is not None:
            r = r / self.sqrt_scaling
        X = r.reshape(self._rev_shape())
        X = self._transform(X, transpose=True)
        X = X * self.inv_diag
        self.counter.add("fd_diagonal", X.size)
        X = self._transform(X, transpose=False)
        s = X.ravel()
        if self.sqrt_scaling is not None:
            s = s / self.sqrt_scaling
        return s

    __call__ = apply

    def apply_half(self, v: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Apply ``W`` (or ``W^T``) where ``P^{-1} = W W^T``.

        ``W = D^{-1/2} (U_t (x) U_s) Lambda^{-1/2}``; used to symmetrize
        ``P^{-1} A`` as ``W^T A W`` for eigenvalue estimates.
        """
        v = np.asarray(v, dtype=float)
        sqrt_inv = np.sqrt(self.inv_diag)
        if transpose:
            if self.sqrt_scaling is not None:
                v = v / self.sqrt_scaling
            X = self._transform(v.reshape(self._rev_shape()), transpose=True) * sqrt_inv
            return X.ravel()
        X = self._transform(v.reshape(self._rev_shape()) * sqrt_inv, transpose=False).ravel()
        if self.sqrt_scaling is not None:
            X = X / self.sqrt_scaling
        return X

    def transform_flops_per_apply(self) -> int:
        """Model count ``4 N_dof (sum_k n_k + n_t)`` of the two transforms."""
        return 4 * self.n_dof * (sum(self.shape[:-1]) + self.shape[-1])

    def to_dense(self) -> np.ndarray:
        """Densely materialized ``P`` (or the scaled ``D^{1/2} P D^{1/2}``); small sizes only."""
        if self.factors is None:
            raise ArgumentError("factor matrices were not retained")
        f = self.factors
        Ms = list(reversed(f.M))
        P = kron_all([f.K_t] + Ms)
        d = len(f.M)
        for k in range(d):
            mats = [f.J[j] if j == k else f.M[j] for j in range(d)]
            P = P + kron_all([f.M_t] + list(reversed(mats)))
        if self.sqrt_scaling is not None:
            P = self.sqrt_scaling[:, None] * P * self.sqrt_scaling[None, :]
        return P


def factor_diagonal(factors: ParametricFactors) -> np.ndarray:
    """Diagonal of the unscaled ``P`` from the univariate factor diagonals (reversed-axis layout)."""
    d = len(factors.M)
    dM = [np.diag(m) for m in factors.M]
    dJ = [np.diag(j) for j in factors.J]

    def outer_rev(time_vec, space_vecs):
        out = time_vec
        for v in reversed(space_vecs):
            out = np.multiply.outer(out, v)
        return out

    diag = outer_rev(np.diag(factors.K_t), dM)
    for k in range(d):
        diag = diag + outer_rev(np.diag(factors.M_t), [dJ[j] if j == k else dM[j] for j in range(d)])
    return diag.ravel()


def build_fd(factors: ParametricFactors, diag_A: np.ndarray | None = None, keep_factors: bool = True,
             counter: FlopCounter | None = None) -> FDPreconditioner:
    """Eigen-decompose the pencils and precompute the inverse eigenvalue-sum tensor.

    With ``diag_A`` the result realizes ``(D^{1/2} P D^{1/2})^{-1}`` with
    ``D = diag(A) / diag(P)``; the diagonal of ``P`` comes from Kronecker
    factor diagonals without forming ``P``.
    """
    t0 = time.perf_counter()
    counter = counter if counter is not None else FlopCounter()
    d = len(factors.M)
    pairs = [generalized_eig(factors.J[k], factors.M[k], counter) for k in range(d)]
    tpair = generalized_eig(factors.K_t, factors.M_t, counter)
    residuals = {f"space_{k + 1}": pairs[k].residual(factors.J[k], factors.M[k]) for k in range(d)}
    residuals["time"] = tpair.residual(factors.K_t, factors.M_t)
    shape = tuple(m.shape[0] for m in factors.M) + (factors.K_t.shape[0],)
    lam = tpair.lam
    for k in reversed(range(d)):
        lam = np.add.outer(lam, pairs[k].lam)
    if np.any(~(lam > 0)):
        raise NotSPDError("eigenvalue sums must be positive")
    sqrt_scaling = None
    if diag_A is not None:
        diag_A = np.asarray(diag_A, dtype=float)
        D = diag_A / factor_diagonal(factors)
        if np.any(~(D > 0)):
            raise ScalingError("diagonal scaling has nonpositive entries")
        sqrt_scaling = np.sqrt(D)
    pc = FDPreconditioner(pairs, tpair, shape, 1.0 / lam, sqrt_scaling, counter,
                          eig_residuals=residuals, factors=factors if keep_factors else None)
    pc.setup_time = time.perf_counter() - t0
    log.debug("FD setup %.3fs, eigen residuals %s", pc.setup_time, residuals)
    return pc


def apply_fd(pc: FDPreconditioner, r: np.ndarray) -> np.ndarray:
    return pc.apply(r)


def extreme_eigenvalues(op, pc: FDPreconditioner, dense_max: int = 2000, tol: float = 1e-6) -> tuple:
    """``(lambda_min, lambda_max)`` of ``P^{-1} A``.

    Dense symmetric eigensolve of ``W^T A W`` up to ``dense_max`` unknowns,
    Lanczos (ARPACK) on the same symmetric operator above that.
    """
    n = pc.n_dof
    if n <= dense_max:
        E = np.eye(n)
        AW = np.column_stack([op.apply(pc.apply_half(E[:, j])) for j in range(n)])
        S = np.column_stack([pc.apply_half(AW[:, j], transpose=True) for j in range(n)])
        lam = sla.eigvalsh(0.5 * (S + S.T))
        return float(lam[0]), float(lam[-1])
    from scipy.sparse.linalg import LinearOperator, eigsh

    S = LinearOperator((n, n), matvec=lambda v: pc.apply_half(op.apply(pc.apply_half(np.ravel(v))), transpose=True),
                       dtype=float)
    lo = eigsh(S, k=1, which="SA", tol=tol, return_eigenvectors=False)[0]
    hi = eigsh(S, k=1, which="LA", tol=tol, return_eigenvectors=False)[0]
    return float(lo), float(hi)
