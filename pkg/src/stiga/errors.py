"""Manufactured solutions and space-time error norms."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import sympy

from .assembly import SpatialData, _colloc, default_quadrature, spatial_data
from .exceptions import ArgumentError
from .geometry import GeometryMap, derivative_indices, eval_geometry_grid
from .kronecker import mode_multiply
from .splines import TensorSpace, build_quadrature

_X = sympy.symbols("x y z")
_T = sympy.Symbol("t")


def _vectorize(expr, d: int) -> Callable:
    fn = sympy.lambdify((*_X[:d], _T), expr, modules="numpy")

    def call(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = fn(*(x[..., k] for k in range(d)), t)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    return call


@dataclass(eq=False)
class ManufacturedSolution:
    """Closed-form ``u(x, t)`` with derivatives and source ``f = u_t - Delta u``.

    Callables take ``x`` of shape (..., d) and ``t`` broadcastable against
    ``x[..., 0]``.
    """

    name: str
    dim: int
    expression: str
    u: Callable
    u_t: Callable
    grad: list
    lap: Callable
    f: Callable
    homogeneous: bool = False

    @classmethod
    def from_expression(cls, name: str, expr, dim: int, homogeneous: bool = False) -> "ManufacturedSolution":
        expr = sympy.sympify(expr, locals={"x": _X[0], "y": _X[1], "z": _X[2], "t": _T})
        xs = _X[:dim]
        u_t = sympy.diff(expr, _T)
        grad = [sympy.diff(expr, v) for v in xs]
        lap = sum(sympy.diff(expr, v, 2) for v in xs)
        f = sympy.simplify(u_t - lap)
        return cls(name, dim, str(expr), _vectorize(expr, dim), _vectorize(u_t, dim),
                   [_vectorize(g, dim) for g in grad], _vectorize(lap, dim), _vectorize(f, dim), homogeneous)

    def gradient(self, x, t) -> np.ndarray:
        return np.stack([g(x, t) for g in self.grad], axis=-1)


_REGISTRY_EXPR = {
    # homogeneous boundary data and zero initial value on the quarter annulus
    "quarter_annulus_2d": ("-(x**2 + y**2 - 1)*(x**2 + y**2 - 4)*x*y**2*sin(pi*t)", 2, True),
    "unit_cube": ("sin(pi*x)*sin(pi*y)*sin(pi*z)*sin(t)", 3, True),
    # time independent, nonzero initial and boundary data
    "rotated_quarter_annulus_3d": ("-(x**2 + y**2 - 1)*(x**2 + y**2 - 4)*x*y**2*sin(z)", 3, False),
    # contained in every space with p_s >= 2, p_t >= 1
    "unit_square": ("x**2*y*(1 + t)", 2, False),
    "unit_square_sine": ("sin(pi*x)*sin(pi*y)*sin(pi*t)", 2, True),
}

_CACHE: dict = {}


def manufactured_solution(name: str) -> ManufacturedSolution:
    if name not in _REGISTRY_EXPR:
        raise ArgumentError(f"no manufactured solution named {name!r}; choose from {sorted(_REGISTRY_EXPR)}")
    if name not in _CACHE:
        expr, dim, hom = _REGISTRY_EXPR[name]
        _CACHE[name] = ManufacturedSolution.from_expression(name, expr, dim, hom)
    return _CACHE[name]


def registered_solutions() -> list:
    return sorted(_REGISTRY_EXPR)


@dataclass
class ErrorReport:
    v0: float
    l2: float
    h1: float
    abs_v0: float = 0.0
    abs_l2: float = 0.0
    abs_h1: float = 0.0
    n_el: tuple = ()
    p_s: int = 0
    p_t: int = 0
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _spatial_fields(coef: np.ndarray, sd: SpatialData) -> dict:
    """Parametric derivatives of the spline at the spatial quadrature grid: alpha -> (Q_s, m_t)."""
    d = sd.dim
    out = {}
    for alpha in derivative_indices(d):
        arr = coef
        for k in range(d):
            arr = mode_multiply(arr, sd.colloc[k][alpha[k]], k)
        out[alpha] = arr.reshape(-1, arr.shape[-1])
    return out


def compute_errors(coef: np.ndarray, space: TensorSpace, geom: GeometryMap, exact: ManufacturedSolution,
                   quad: tuple | None = None, refine: bool = False, sd: SpatialData | None = None,
                   chunk_points: int = 2_000_000) -> ErrorReport:
    """Relative V0, L2 and H1 space-time errors of the full coefficient tensor ``coef``.

    ``coef`` has shape ``space.full_shape`` and includes the lifted
    boundary/initial coefficients.  ``refine`` doubles the points per element.
    """
    coef = np.asarray(coef, dtype=float)
    if coef.shape != space.full_shape:
        raise ArgumentError(f"coefficients of shape {coef.shape} do not match {space.full_shape}")
    if refine:
        quad = tuple(build_quadrature(b.kv, 2 * (b.degree + 1)) for b in list(space.space) + [space.time])
        sd = None
    elif quad is None:
        quad = sd.quad if sd is not None else default_quadrature(space)
    if sd is None or sd.quad is not quad:
        sd = spatial_data(space, geom, quad)
    d = space.dim
    T = geom.T
    pd = eval_geometry_grid(geom, [q.points for q in quad[:d]])
    jinv = pd.jac_inv.reshape(-1, d, d)
    x = sd.x.reshape(-1, d)
    wx = (sd.absdet * sd.weights).reshape(-1)

    fields = _spatial_fields(coef, sd)
    zero = (0,) * d
    val_s = fields[zero]
    grad_hat = [fields[tuple(int(i == k) for i in range(d))] for k in range(d)]
    # physical gradient rows: grad_i = sum_j jinv[j, i] v_j
    grad_s = [sum(jinv[:, j, i][:, None] * grad_hat[j] for j in range(d)) for i in range(d)]
    lap_s = 0.0
    for alpha, c in sd.laplacian_terms():
        lap_s = lap_s + c.reshape(-1)[:, None] * fields[alpha]
    if np.isscalar(lap_s):
        lap_s = np.zeros_like(val_s)

    tq = quad[-1]
    Bt = _colloc(space.time, tq, 1)
    tphys = T * tq.points
    wt = tq.weights * T
    acc = dict(e_val=0.0, e_dt=0.0, e_grad=0.0, e_lap=0.0, u_val=0.0, u_dt=0.0, u_grad=0.0, u_lap=0.0)
    step = max(1, chunk_points // max(x.shape[0], 1))
    for start in range(0, tq.n_points, step):
        sl = slice(start, start + step)
        B0, B1 = Bt[0][sl].T, Bt[1][sl].T / T
        w = wx[:, None] * wt[None, sl]
        xs, ts = x[:, None, :], tphys[None, sl]

        u = exact.u(xs, ts)
        e = val_s @ B0 - u
        acc["e_val"] += float(np.sum(w * e * e))
        acc["u_val"] += float(np.sum(w * u * u))

        u = exact.u_t(xs, ts)
        e = val_s @ B1 - u
        acc["e_dt"] += float(np.sum(w * e * e))
        acc["u_dt"] += float(np.sum(w * u * u))

        for i in range(d):
            u = exact.grad[i](xs, ts)
            e = grad_s[i] @ B0 - u
            acc["e_grad"] += float(np.sum(w * e * e))
            acc["u_grad"] += float(np.sum(w * u * u))

        u = exact.lap(xs, ts)
        e = lap_s @ B0 - u
        acc["e_lap"] += float(np.sum(w * e * e))
        acc["u_lap"] += float(np.sum(w * u * u))

    def rel(num, den):
        return math.sqrt(num / den) if den > 0 else math.sqrt(num)

    e_v0 = acc["e_lap"] + acc["e_dt"]
    u_v0 = acc["u_lap"] + acc["u_dt"]
    e_h1 = acc["e_val"] + acc["e_grad"] + acc["e_dt"]
    u_h1 = acc["u_val"] + acc["u_grad"] + acc["u_dt"]
    return ErrorReport(
        v0=rel(e_v0, u_v0), l2=rel(acc["e_val"], acc["u_val"]), h1=rel(e_h1, u_h1),
        abs_v0=math.sqrt(e_v0), abs_l2=math.sqrt(acc["e_val"]), abs_h1=math.sqrt(e_h1),
        n_el=tuple(b.kv.n_elements for b in space.space) + (space.time.kv.n_elements,),
        p_s=space.space[0].degree, p_t=space.time.degree,
    )


def observed_order(e_coarse: float, e_fine: float) -> float:
    """``log2(e_h / e_{h/2})``."""
    if not (e_coarse > 0 and e_fine > 0):
        raise ArgumentError("observed order needs two positive errors")
    return math.log2(e_coarse / e_fine)
