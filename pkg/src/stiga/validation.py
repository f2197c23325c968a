"""Small-instance oracle suite behind ``stiga validate``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly, fd_precond
from .errors import manufactured_solution
from .geometry import make_domain
from .oracle import dense_load, dense_system
from .solver import DensePreconditioner, PCGConfig, pcg
from .splines import make_space

# (domain, p_s, p_t, n_el, T)
SMALL_CASES = (
    ("unit_square", 2, 2, 3, 1.0),
    ("unit_square", 3, 1, 2, 0.5),
    ("quarter_annulus_2d", 2, 2, 3, 1.0),
    ("quarter_annulus_2d", 3, 2, 3, 2.0),
    ("quarter_annulus_2d", 2, 3, 4, 1.0),
    ("unit_cube", 2, 2, 2, 1.0),
    ("rotated_quarter_annulus_3d", 2, 1, 2, 1.0),
)


@dataclass
class Check:
    name: str
    value: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.limit)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (limit {self.limit:.0e})"


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.finfo(float).tiny))


def run_validation(seed: int = 0, cases=SMALL_CASES) -> list:
    rng = np.random.default_rng(seed)
    checks = []
    for domain, p_s, p_t, n, T in cases:
        tag = f"{domain} p_s={p_s} p_t={p_t} n_el={n} T={T}"
        geom = make_domain(domain, T)
        space = make_space(p_s, p_t, n, geom.dim)
        quad = assembly.default_quadrature(space)
        sd = assembly.spatial_data(space, geom, quad)
        factors = assembly.assemble_factors(space, geom, quad, sd)
        op = factors.operator()
        A_ref = dense_system(space, geom, quad)
        v = rng.standard_normal(space.N_dof)
        checks.append(Check(f"operator vs dense assembly [{tag}]",
                            float(np.linalg.norm(op.apply(v) - A_ref @ v) / np.linalg.norm(A_ref @ v)), 1e-10))
        checks.append(Check(f"operator entries [{tag}]", _rel(op.to_dense(), A_ref), 1e-10))
        exact = manufactured_solution(domain)
        load = assembly.assemble_rhs_and_lifting(space, geom, exact, quad, sd, factors)
        checks.append(Check(f"load vs dense assembly [{tag}]", _rel(load.F, dense_load(space, geom, exact.f, quad)),
                            1e-10))
        for kind in ("p", "pg"):
            if kind == "p":
                pf = assembly.assemble_parametric_factors(space, None, quad)
                pc = fd_precond.build_fd(pf)
            else:
                coeffs = fd_precond.separable_approx(geom, space, quad=quad)
                pc = fd_precond.build_fd(assembly.assemble_parametric_factors(space, coeffs, quad),
                                         diag_A=op.diagonal())
            P = pc.to_dense()
            worst = 0.0
            for _ in range(10):
                r = rng.standard_normal(space.N_dof)
                worst = max(worst, float(np.linalg.norm(P @ pc.apply(r) - r) / np.linalg.norm(r)))
            checks.append(Check(f"FD inverts dense {kind.upper()} [{tag}]", worst, 1e-9))
            checks.append(Check(f"eigen residuals {kind.upper()} [{tag}]", max(pc.eig_residuals.values()), 1e-10))
        b = rng.standard_normal(space.N_dof)
        _, st = pcg(op, DensePreconditioner(A_ref), b, PCGConfig(tol=1e-8))
        checks.append(Check(f"exact preconditioner iterations [{tag}]", st.iterations, 1))
    return checks
