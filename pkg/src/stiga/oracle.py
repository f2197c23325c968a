"""Brute-force dense reference assembly for small instances.

Every constrained space-time basis function is tabulated at every quadrature
point, pushed forward pointwise through the chain rule, and the bilinear form
``int int (d_t v - Delta v)(d_t w - Delta w)`` is formed as a dense product.
Nothing here shares code with the sum-factorized path beyond basis and
geometry evaluation.
"""
from __future__ import annotations

import numpy as np

from .assembly import default_quadrature
from .exceptions import ResourceError
from .geometry import GeometryMap, eval_geometry_grid, physical_second_derivative
from .splines import TensorSpace, eval_basis

MAX_ENTRIES = 5e7


def _tensor_table(space: TensorSpace, quad: tuple):
    """Parametric values, gradients and Hessians of the constrained spatial basis.

    Rows follow the C-ordered point grid ``(q_1, ..., q_d)``; columns the
    colexicographic function index (direction 1 fastest).
    """
    d = space.dim
    tabs = [eval_basis(b, q.points, 2)[:, 1:b.m - 1, :] for b, q in zip(space.space, quad[:d])]
    qs, fs = "abc"[:d], "ijk"[:d]
    spec = ",".join(q + f for q, f in zip(qs, fs)) + "->" + qs + fs[::-1]

    def product(orders):
        arr = np.einsum(spec, *[tabs[k][:, :, orders[k]] for k in range(d)])
        return arr.reshape(int(np.prod(arr.shape[:d])), -1)

    val = product([0] * d)
    grad = np.stack([product([int(i == k) for i in range(d)]) for k in range(d)], axis=-1)
    hess = np.zeros(val.shape + (d, d))
    for j in range(d):
        for k in range(d):
            orders = [0] * d
            orders[j] += 1
            orders[k] += 1
            hess[..., j, k] = product(orders)
    return val, grad, hess


def _residual_matrix(space: TensorSpace, geom: GeometryMap, quad: tuple):
    """``R[(q_t, q_x), n] = d_t B_n - Delta B_n`` at every point, with the point weights and ``x``."""
    d = space.dim
    pd = eval_geometry_grid(geom, [q.points for q in quad[:d]])
    flat = type(pd)(*(getattr(pd, name).reshape((-1,) + getattr(pd, name).shape[d:])
                      for name in ("x", "jac", "det", "jac_inv", "d_jac_inv", "hessian")))
    val, grad, hess = _tensor_table(space, quad)
    lap = sum(physical_second_derivative(grad, hess, flat, i) for i in range(d))
    wq = quad[0].weights
    for q in quad[1:d]:
        wq = np.multiply.outer(wq, q.weights)
    wx = np.abs(flat.det) * wq.reshape(-1)
    T = geom.T
    tq = quad[-1]
    tt = eval_basis(space.time, tq.points, 1)[:, 1:, :]
    R = np.kron(tt[:, :, 1] / T, val) - np.kron(tt[:, :, 0], lap)
    return R, np.kron(tq.weights * T, wx), flat.x, T * tq.points


def _check_size(space: TensorSpace, quad: tuple):
    n_pts = int(np.prod([q.n_points for q in quad]))
    if n_pts * space.N_dof > MAX_ENTRIES:
        raise ResourceError(f"dense oracle too large ({n_pts} points x {space.N_dof} functions)")


def dense_system(space: TensorSpace, geom: GeometryMap, quad: tuple | None = None) -> np.ndarray:
    """Dense ``A`` on the constrained space, ordered colexicographically (time slowest)."""
    quad = quad if quad is not None else default_quadrature(space)
    _check_size(space, quad)
    R, w, _, _ = _residual_matrix(space, geom, quad)
    return R.T @ (w[:, None] * R)


def dense_load(space: TensorSpace, geom: GeometryMap, f, quad: tuple | None = None) -> np.ndarray:
    """Dense reference for ``F_i = int int f (d_t B_i - Delta B_i)``."""
    quad = quad if quad is not None else default_quadrature(space)
    _check_size(space, quad)
    R, w, x, t = _residual_matrix(space, geom, quad)
    fv = np.asarray(f(x[None, :, :], t[:, None]), dtype=float)
    fv = np.broadcast_to(fv, (t.size, x.shape[0])).reshape(-1)
    return R.T @ (w * fv)
