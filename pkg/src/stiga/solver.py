"""Preconditioned conjugate gradient on the matrix-free space-time operator."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArgumentError, NumericalError

log = logging.getLogger(__name__)

MAXITER_CAP = 10_000


@dataclass
class PCGConfig:
    tol: float = 1e-8
    maxiter: int | None = None
    x0: np.ndarray | None = None
    verify: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ArgumentError(f"tolerance must lie in (0, 1), got {self.tol}")
        if self.maxiter is not None and self.maxiter < 1:
            raise ArgumentError("maxiter must be at least 1")

    def max_iterations(self, n: int) -> int:
        if self.maxiter is not None:
            return int(self.maxiter)
        return max(1, min(MAXITER_CAP, int(10 * math.sqrt(n))))


@dataclass
class SolveStats:
    iterations: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    setup_time: float = 0.0
    precond_time: float = 0.0
    operator_time: float = 0.0
    total_time: float = 0.0
    true_residual: float = float("nan")
    flops: dict = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def precond_share(self) -> float:
        return self.precond_time / self.total_time if self.total_time > 0 else 0.0


def _call(f, v):
    if hasattr(f, "apply"):
        return f.apply(v)
    return f(v)


def pcg(op, pc, b: np.ndarray, cfg: PCGConfig | None = None, setup_time: float = 0.0):
    """Solve ``op x = b`` by PCG; returns ``(x, stats)``.

    Stops when ``||r_k|| / ||b|| <= tol`` on the recurrence residual.  Running
    out of iterations is reported through ``stats.converged``; a non-finite
    recurrence raises :class:`NumericalError`.  ``pc=None`` means no
    preconditioning.
    """
    cfg = cfg or PCGConfig()
    b = np.asarray(b, dtype=float)
    n = b.size
    stats = SolveStats(setup_time=setup_time)
    t_start = time.perf_counter()
    x = np.zeros(n) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    if x.shape != b.shape:
        raise ArgumentError("initial guess has the wrong length")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        stats.converged = True
        stats.residuals = [0.0]
        stats.true_residual = 0.0
        return np.zeros(n), stats

    def A(v):
        t0 = time.perf_counter()
        out = _call(op, v)
        stats.operator_time += time.perf_counter() - t0
        return out

    def P(v):
        if pc is None:
            return v.copy()
        t0 = time.perf_counter()
        out = _call(pc, v)
        stats.precond_time += time.perf_counter() - t0
        return out

    r = b - A(x) if np.any(x) else b.copy()
    rel = float(np.linalg.norm(r)) / bnorm
    stats.residuals.append(rel)
    maxiter = cfg.max_iterations(n)
    if rel <= cfg.tol:
        stats.converged = True
    else:
        z = P(r)
        p = z.copy()
        rz = float(r @ z)
        for k in range(1, maxiter + 1):
            q = A(p)
            pq = float(p @ q)
            if not np.isfinite(pq) or not np.isfinite(rz):
                raise NumericalError(f"non-finite value in PCG recurrence at iteration {k}",
                                     payload={"iteration": k, "pq": pq, "rz": rz})
            if pq <= 0.0:
                raise NumericalError(f"operator not positive definite along search direction (p^T A p = {pq:.3e})",
                                     payload={"iteration": k})
            alpha = rz / pq
            x += alpha * p
            r -= alpha * q
            rel = float(np.linalg.norm(r)) / bnorm
            stats.residuals.append(rel)
            stats.iterations = k
            if not np.isfinite(rel):
                raise NumericalError(f"non-finite residual at iteration {k}", payload={"iteration": k})
            if rel <= cfg.tol:
                stats.converged = True
                break
            z = P(r)
            rz_new = float(r @ z)
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
    stats.total_time = time.perf_counter() - t_start + setup_time
    if cfg.verify:
        stats.true_residual = float(np.linalg.norm(b - _call(op, x))) / bnorm
        if stats.converged and stats.true_residual > 10 * cfg.tol:
            log.warning("true residual %.3e exceeds 10x tolerance", stats.true_residual)
            stats.converged = False
    for obj in (op, pc):
        counter = getattr(obj, "counter", None)
        if counter is not None:
            for key, val in counter.as_dict().items():
                stats.flops[key] = stats.flops.get(key, 0) + val
    log.info("PCG: %d iterations, relative residual %.3e, converged=%s", stats.iterations, stats.final_residual,
             stats.converged)
    return x, stats


@dataclass(eq=False)
class DensePreconditioner:
    """Exact inverse of a small dense matrix via Cholesky (reference preconditioner)."""

    matrix: np.ndarray

    def __post_init__(self):
        import scipy.linalg as sla

        self._factor = sla.cho_factor(np.asarray(self.matrix, dtype=float))

    def apply(self, r):
        import scipy.linalg as sla

        return sla.cho_solve(self._factor, r)

    __call__ = apply


def check_symmetry(pc, n: int, rng: np.random.Generator, pairs: int = 3) -> float:
    """Largest relative ``|r^T P^{-1} s - s^T P^{-1} r|`` over random pairs."""
    worst = 0.0
    for _ in range(pairs):
        r, s = rng.standard_normal(n), rng.standard_normal(n)
        a, b = float(r @ _call(pc, s)), float(s @ _call(pc, r))
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), np.finfo(float).tiny))
    return worst
