"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""
import time

import numpy as np
import pytest

from stiga.assembly import assemble_factors, assemble_parametric_factors, default_quadrature
from stiga.fd_precond import build_fd, extreme_eigenvalues, generalized_eig, separable_approx
from stiga.geometry import make_domain
from stiga.harness import RunConfig, build_preconditioner, build_problem, compare_precond, run_convergence, run_scaling
from stiga.kronecker import KronSumOperator
from stiga.oracle import dense_system
from stiga.solver import DensePreconditioner, PCGConfig, pcg
from stiga.splines import Basis1D, KnotVector, eval_basis, make_space

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, detail

    return emit


CUBE_REFERENCE = {(2, 8): 9, (3, 8): 11, (4, 8): 11, (2, 16): 11, (3, 16): 11, (4, 16): 12}


@pytest.fixture(scope="module")
def cube_sweep():
    t0 = time.perf_counter()
    counts = {}
    for (p, n) in CUBE_REFERENCE:
        problem = build_problem(RunConfig(domain="unit_cube", degree_space=p, degree_time=p, n_el=n,
                                          compute_errors=False))
        pc, info = build_preconditioner(problem, "p")
        _, st = pcg(problem.operator(), pc, problem.load.rhs, PCGConfig(tol=1e-8), setup_time=info["setup_time"])
        assert st.converged
        counts[(p, n)] = st.iterations
    return counts, time.perf_counter() - t0


def test_criterion_1_cube_iterations(cube_sweep, report):
    counts, elapsed = cube_sweep
    ok = all(abs(counts[k] - CUBE_REFERENCE[k]) <= 3 for k in CUBE_REFERENCE) and elapsed < 120
    detail = ", ".join(f"p={p} n_el={n}: {counts[(p, n)]} (reference {CUBE_REFERENCE[(p, n)]})"
                       for p, n in CUBE_REFERENCE)
    report(1, "cube iteration counts with P", ok, f"{detail}; {elapsed:.1f}s")


def test_criterion_2_robustness(cube_sweep, report):
    counts, _ = cube_sweep
    spread = max(counts.values()) - min(counts.values())
    report(2, "robustness in degree and mesh", spread <= 5,
           f"iterations {min(counts.values())}..{max(counts.values())}, spread {spread}")


def test_criterion_3_rotated_quarter(report):
    t0 = time.perf_counter()
    rows = compare_precond("rotated_quarter_annulus_3d", 2, [8, 16], RunConfig(domain="rotated_quarter_annulus_3d"))
    elapsed = time.perf_counter() - t0
    ref_p, ref_pg = {8: 107, 16: 126}, {8: 24, 16: 35}
    ok = elapsed < 300
    parts = []
    for r in rows:
        ok &= abs(r.iterations_p - ref_p[r.n_el]) <= 0.25 * ref_p[r.n_el]
        ok &= abs(r.iterations_pg - ref_pg[r.n_el]) <= 0.25 * ref_pg[r.n_el]
        ok &= r.ratio <= 0.4
        parts.append(f"n_el={r.n_el}: P {r.iterations_p} (reference {ref_p[r.n_el]}), "
                     f"P^G {r.iterations_pg} (reference {ref_pg[r.n_el]}), ratio {r.ratio:.2f}")
    report(3, "rotated quarter annulus P vs P^G", ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_criterion_4_convergence_orders(report):
    t0 = time.perf_counter()
    pairs = [(2, 2), (3, 3), (3, 2), (4, 3)]
    rows = run_convergence("quarter_annulus_2d", pairs, [8, 16, 32, 64], RunConfig(domain="quarter_annulus_2d"))
    elapsed = time.perf_counter() - t0
    last = {(r.p_s, r.p_t): r for r in rows if r.n_el == 64}
    ok = elapsed < 600
    parts = []
    for (p_s, p_t), r in last.items():
        v0_target = p_t - 1 if p_s == p_t else p_t
        ok &= abs(r.order_v0 - v0_target) <= 0.2
        ok &= abs(r.order_h1 - p_t) <= 0.2
        if p_s == p_t:
            ok &= (abs(r.order_l2 - (p_t + 1)) <= 0.2) if p_t == 3 else (r.order_l2 < 3)
        parts.append(f"p_s={p_s} p_t={p_t}: V0 {r.order_v0:.2f} (target {v0_target}) "
                     f"H1 {r.order_h1:.2f} L2 {r.order_l2:.2f}")
    report(4, "convergence orders on the quarter annulus", ok, "; ".join(parts) + f"; {elapsed:.1f}s")


ORACLE_CASES = [("unit_square", 2, 2, 3), ("unit_square", 3, 2, 3), ("quarter_annulus_2d", 2, 2, 3),
                ("quarter_annulus_2d", 3, 3, 3), ("quarter_annulus_2d", 2, 1, 4), ("quarter_annulus_2d", 4, 2, 2)]


def test_criterion_5_oracle_equivalence(report, rng):
    worst_a = worst_p = worst_pg = 0.0
    for name, p_s, p_t, n in ORACLE_CASES:
        geom = make_domain(name)
        space = make_space(p_s, p_t, n, geom.dim)
        assert space.N_dof <= 512
        quad = default_quadrature(space)
        op = assemble_factors(space, geom, quad).operator()
        A = dense_system(space, geom, quad)
        worst_a = max(worst_a, np.linalg.norm(op.to_dense() - A) / np.linalg.norm(A))
        for _ in range(3):
            v = rng.standard_normal(space.N_dof)
            worst_a = max(worst_a, np.linalg.norm(op.apply(v) - A @ v) / np.linalg.norm(A @ v))
        pc = build_fd(assemble_parametric_factors(space, None, quad))
        coeffs = separable_approx(geom, space, quad=quad)
        pcg_ = build_fd(assemble_parametric_factors(space, coeffs, quad), diag_A=op.diagonal())
        for pre, key in ((pc, "p"), (pcg_, "pg")):
            P = pre.to_dense()
            r = rng.standard_normal(space.N_dof)
            err = np.linalg.norm(P @ pre.apply(r) - r) / np.linalg.norm(r)
            if key == "p":
                worst_p = max(worst_p, err)
            else:
                worst_pg = max(worst_pg, err)
    ok = worst_a <= 1e-10 and worst_p <= 1e-9 and worst_pg <= 1e-9
    report(5, "matrix-free and FD against dense oracles", ok,
           f"{len(ORACLE_CASES)} instances; A rel {worst_a:.1e}, P inverse rel {worst_p:.1e}, "
           f"P^G inverse rel {worst_pg:.1e}")


def test_criterion_6_spectral_bounds(report):
    lo, hi = [], []
    geom = make_domain("unit_cube")
    for p in (2, 3, 4):
        for n in (4, 8):
            space = make_space(p, p, n, 3)
            op = assemble_factors(space, geom).operator()
            pc = build_fd(assemble_parametric_factors(space))
            a, b = extreme_eigenvalues(op, pc)
            lo.append(a)
            hi.append(b)
    ok = max(lo) / min(lo) < 2 and max(hi) / min(hi) < 2 and min(lo) > 0
    report(6, "extreme eigenvalues of P^-1 A on the cube", ok,
           f"lambda_min in [{min(lo):.3f}, {max(lo):.3f}], lambda_max in [{min(hi):.3f}, {max(hi):.3f}]")


def test_criterion_7_scaling(report):
    res = run_scaling("unit_cube", 2, [4, 8, 16, 32], repeats=5)
    flops_ok = all(abs(r.apply_flops - r.model_flops) <= 0.1 * r.model_flops for r in res.rows)
    ok = res.apply_slope <= 1.25 and flops_ok
    report(7, "FD application scaling", ok,
           f"apply slope {res.apply_slope:.3f} over N_dof {res.rows[0].n_dof}..{res.rows[-1].n_dof}, "
           f"setup slope {res.setup_slope:.3f}, FLOP counter matches model: {flops_ok}")


def test_criterion_8_property_suites(report, rng):
    checks = {}
    # partition of unity on random open knot vectors
    pu = 0.0
    for _ in range(20):
        p = int(rng.integers(1, 5))
        inner = np.sort(rng.random(int(rng.integers(0, 6))))
        kv = KnotVector(p, np.r_[np.zeros(p + 1), inner, np.ones(p + 1)])
        vals = eval_basis(Basis1D(kv), rng.random(30))[:, :, 0]
        pu = max(pu, np.abs(vals.sum(axis=1) - 1).max())
    checks["partition of unity"] = pu <= 1e-13
    # Kronecker mixed-product law and matrix-free agreement
    A, B, C, D = (rng.standard_normal((4, 4)) for _ in range(4))
    law = np.abs(np.kron(A, B) @ np.kron(C, D) - np.kron(A @ C, B @ D)).max()
    v = rng.standard_normal(16)
    mf = np.abs(KronSumOperator([(A, B), (C, D)]).apply(v) - (np.kron(A, B) + np.kron(C, D)) @ v).max()
    checks["Kronecker algebra"] = law <= 1e-12 and mf <= 1e-12
    # generalized eigen residuals on assembled univariate pencils
    res = 0.0
    for p in (2, 3, 4):
        pf = assemble_parametric_factors(make_space(p, p, 16, 1))
        for K, M in ((pf.J[0], pf.M[0]), (pf.K_t, pf.M_t)):
            res = max(res, generalized_eig(K, M).residual(K, M))
    checks["eigen residuals"] = res <= 1e-10
    # exact preconditioner converges in one iteration
    problem = build_problem(RunConfig(domain="quarter_annulus_2d", degree_space=2, degree_time=2, n_el=4,
                                      compute_errors=False))
    _, st = pcg(problem.operator(), DensePreconditioner(problem.operator().to_dense()), problem.load.rhs,
                PCGConfig(tol=1e-10))
    checks["exact preconditioner"] = st.iterations == 1
    # Galerkin reproduction of an in-space solution
    from stiga.harness import solve

    err = solve(RunConfig(domain="unit_square", solution="unit_square", degree_space=2, degree_time=1, n_el=4,
                          tol=1e-12)).errors
    worst = max(err.v0, err.l2, err.h1)
    checks["Galerkin reproduction"] = worst <= 1e-9
    detail = (f"PU {pu:.1e}, Kronecker {max(law, mf):.1e}, eig residual {res:.1e}, exact-PC iterations "
              f"{st.iterations}, reproduction error {worst:.1e}")
    report(8, "property suites", all(checks.values()), detail)
