"""Benchmark orchestration: single solves, convergence studies, preconditioner
comparisons and timing/scaling studies, with JSON/CSV reports."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import assembly, fd_precond, solver
from .errors import ErrorReport, compute_errors, manufactured_solution, observed_order, registered_solutions
from .exceptions import ConfigError, ResourceError
from .geometry import DOMAINS, make_domain
from .kronecker import FlopCounter
from .splines import TensorSpace, make_space

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ENV = "STIGA_OUTPUT_DIR"
MEMORY_ENV = "STIGA_MEMORY_LIMIT_GB"
DEFAULT_MEMORY_GB = 4.0
PRECONDITIONERS = ("p", "pg", "exact")
EXACT_MAX_DOF = 4096
EXACT_THRESHOLD = 1e-9


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


@dataclass
class RunConfig:
    domain: str = "unit_cube"
    degree_space: int = 2
    degree_time: int = 2
    n_el: int = 8
    final_time: float = 1.0
    precond: str = "p"
    tol: float = 1e-8
    maxiter: int | None = None
    solution: str | None = None
    seed: int = 0
    threads: int = 1
    compute_errors: bool = True
    memory_limit_gb: float | None = None
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}; choose from {sorted(DOMAINS)}")
        if int(self.degree_space) != self.degree_space or self.degree_space < 2:
            raise ConfigError("spatial degree must be an integer >= 2 (the Laplacian needs C^1 splines)")
        if int(self.degree_time) != self.degree_time or self.degree_time < 1:
            raise ConfigError("time degree must be an integer >= 1")
        if int(self.n_el) != self.n_el or self.n_el < 1:
            raise ConfigError("n_el must be a positive integer")
        if not (self.final_time > 0 and math.isfinite(self.final_time)):
            raise ConfigError("final time must be positive")
        if self.precond not in PRECONDITIONERS:
            raise ConfigError(f"preconditioner must be one of {PRECONDITIONERS}")
        if not 0 < self.tol < 1:
            raise ConfigError("tolerance must lie in (0, 1)")
        if self.maxiter is not None and self.maxiter < 1:
            raise ConfigError("maxiter must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        sol = self.solution_name
        if sol not in registered_solutions():
            raise ConfigError(f"unknown manufactured solution {sol!r}")
        if manufactured_solution(sol).dim != DOMAINS[self.domain](1.0).dim:
            raise ConfigError(f"solution {sol!r} does not match the dimension of {self.domain!r}")
        return self

    @property
    def solution_name(self) -> str:
        return self.solution or self.domain

    @property
    def dim(self) -> int:
        return make_domain(self.domain).dim

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **dataclasses.asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config file: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


CSV_COLUMNS = (
    "domain", "p_s", "p_t", "n_el", "final_time", "precond", "tol", "n_dof", "iterations", "converged",
    "rel_residual", "true_residual", "assembly_time", "setup_time", "solve_time", "total_time",
    "precond_share", "err_v0", "err_l2", "err_h1", "flops_fd_transform", "flops_fd_setup",
    "flops_operator", "separation_residual", "eig_residual", "geometry",
)


@dataclass
class BenchmarkReport:
    domain: str
    p_s: int
    p_t: int
    n_el: int
    final_time: float
    precond: str
    tol: float
    n_dof: int
    iterations: int = 0
    converged: bool = False
    rel_residual: float = float("nan")
    true_residual: float = float("nan")
    assembly_time: float = 0.0
    setup_time: float = 0.0
    solve_time: float = 0.0
    total_time: float = 0.0
    precond_share: float = 0.0
    err_v0: float = float("nan")
    err_l2: float = float("nan")
    err_h1: float = float("nan")
    flops_fd_transform: int = 0
    flops_fd_setup: int = 0
    flops_operator: int = 0
    separation_residual: float = float("nan")
    eig_residual: float = float("nan")
    geometry: str = ""
    residual_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        # repr-exact floats; NaN encoded by json as NaN
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkReport":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkReport":
        return cls.from_dict(json.loads(text))

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in CSV_COLUMNS}


def _parse_csv_value(name: str, text: str):
    ftype = {f.name: f.type for f in dataclasses.fields(BenchmarkReport)}[name]
    if ftype in ("int", int):
        return int(text)
    if ftype in ("float", float):
        return float(text)
    if ftype in ("bool", bool):
        return text == "True"
    return text


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.csv_row().items()})
    return buf.getvalue()


def reports_from_csv(text: str) -> list:
    rows = csv.DictReader(io.StringIO(text))
    return [BenchmarkReport(**{k: _parse_csv_value(k, v) for k, v in row.items()}) for row in rows]


# --------------------------------------------------------------------------- resources

def estimate_memory(cfg: RunConfig) -> float:
    """Rough peak memory of a run in bytes (solution vectors, sparse factors, quadrature data)."""
    d = cfg.dim
    p, pt, n = cfg.degree_space, cfg.degree_time, cfg.n_el
    m_s = n + p
    n_t = n + pt - 1
    n_dof = (m_s - 2) ** d * n_t
    full_s = m_s ** d
    band = (2 * p + 1) ** d
    q_s = (n * (p + 1)) ** d
    n_terms = d * (d + 3) // 2  # Laplacian terms for a general map
    words = (
        12 * n_dof  # CG vectors, rhs, lifting, work arrays
        + 6 * full_s * band  # band tensors and CSR copies of M, L, J, D
        + 4 * full_s * band  # CSR index arrays (int64)
        + (3 * d * d + 3 * d + n_terms + 8) * q_s  # geometry and coefficient data
        + 2 * (n + pt) * q_s  # time-contracted load
    )
    if cfg.precond == "exact":
        words += n_dof ** 2
    return 8.0 * words


def memory_limit(cfg: RunConfig) -> float:
    gb = cfg.memory_limit_gb
    if gb is None:
        gb = float(os.environ.get(MEMORY_ENV, DEFAULT_MEMORY_GB))
    return gb * 1024 ** 3


def check_resources(cfg: RunConfig) -> None:
    need, limit = estimate_memory(cfg), memory_limit(cfg)
    if need > limit:
        raise ResourceError(f"estimated memory {need / 1024 ** 3:.2f} GB exceeds the limit of "
                            f"{limit / 1024 ** 3:.2f} GB (set {MEMORY_ENV} to raise it)")
    if cfg.precond == "exact" and _n_dof(cfg) > EXACT_MAX_DOF:
        raise ResourceError(f"exact preconditioner limited to N_dof <= {EXACT_MAX_DOF}")


def _n_dof(cfg: RunConfig) -> int:
    return (cfg.n_el + cfg.degree_space - 2) ** cfg.dim * (cfg.n_el + cfg.degree_time - 1)


def thread_limit(n: int):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# --------------------------------------------------------------------------- pipeline

@dataclass(eq=False)
class Problem:
    """Assembled discrete problem for one configuration."""

    cfg: RunConfig
    space: TensorSpace
    geom: object
    quad: tuple
    sd: assembly.SpatialData
    factors: assembly.FactorMatrices
    load: assembly.LoadAndLifting
    exact: object
    assembly_time: float

    def operator(self):
        return self.factors.operator()


def build_problem(cfg: RunConfig) -> Problem:
    cfg.validate()
    check_resources(cfg)
    t0 = time.perf_counter()
    geom = make_domain(cfg.domain, cfg.final_time)
    space = make_space(cfg.degree_space, cfg.degree_time, cfg.n_el, geom.dim)
    quad = assembly.default_quadrature(space)
    sd = assembly.spatial_data(space, geom, quad)
    exact = manufactured_solution(cfg.solution_name)
    factors = assembly.assemble_factors(space, geom, quad, sd, with_coupling=not exact.homogeneous)
    load = assembly.assemble_rhs_and_lifting(space, geom, exact, quad, sd, factors)
    return Problem(cfg, space, geom, quad, sd, factors, load, exact, time.perf_counter() - t0)


def build_preconditioner(problem: Problem, kind: str, counter: FlopCounter | None = None):
    """Returns ``(preconditioner, info)``; ``info`` carries setup diagnostics."""
    counter = counter if counter is not None else FlopCounter()
    t0 = time.perf_counter()
    info = {"separation_residual": float("nan"), "eig_residual": float("nan")}
    if kind == "p":
        pf = assembly.assemble_parametric_factors(problem.space, None, problem.quad)
        pc = fd_precond.build_fd(pf, counter=counter)
    elif kind == "pg":
        coeffs = fd_precond.separable_approx(problem.geom, problem.space, quad=problem.quad)
        pf = assembly.assemble_parametric_factors(problem.space, coeffs, problem.quad)
        pc = fd_precond.build_fd(pf, diag_A=problem.operator().diagonal(), counter=counter)
        info["separation_residual"] = coeffs.max_residual()
    elif kind == "exact":
        pc = solver.DensePreconditioner(problem.operator().to_dense())
    else:
        raise ConfigError(f"unknown preconditioner {kind!r}")
    if isinstance(pc, fd_precond.FDPreconditioner):
        info["eig_residual"] = max(pc.eig_residuals.values())
    info["setup_time"] = time.perf_counter() - t0
    return pc, info


@dataclass(eq=False)
class SolveResult:
    problem: Problem
    solution: np.ndarray
    full: np.ndarray
    stats: solver.SolveStats
    errors: ErrorReport | None
    report: BenchmarkReport


def solve(cfg: RunConfig) -> SolveResult:
    with thread_limit(cfg.threads):
        problem = build_problem(cfg)
        op = problem.operator()
        pc, info = build_preconditioner(problem, cfg.precond)
        pcfg = solver.PCGConfig(tol=cfg.tol, maxiter=cfg.maxiter)
        x, stats = solver.pcg(op, pc, problem.load.rhs, pcfg, setup_time=info["setup_time"])
        full = problem.space.embed(x, problem.load.lifting)
        errs = None
        if cfg.compute_errors:
            errs = compute_errors(full, problem.space, problem.geom, problem.exact, problem.quad, sd=problem.sd)
    flops = stats.flops
    report = BenchmarkReport(
        domain=cfg.domain, p_s=cfg.degree_space, p_t=cfg.degree_time, n_el=cfg.n_el,
        final_time=float(cfg.final_time), precond=cfg.precond, tol=float(cfg.tol), n_dof=problem.space.N_dof,
        iterations=stats.iterations, converged=stats.converged, rel_residual=stats.final_residual,
        true_residual=stats.true_residual, assembly_time=problem.assembly_time, setup_time=info["setup_time"],
        solve_time=stats.total_time - info["setup_time"], total_time=stats.total_time,
        precond_share=stats.precond_share,
        err_v0=errs.v0 if errs else float("nan"), err_l2=errs.l2 if errs else float("nan"),
        err_h1=errs.h1 if errs else float("nan"),
        flops_fd_transform=int(flops.get("fd_transform", 0)), flops_fd_setup=int(flops.get("eig_setup", 0)),
        flops_operator=int(flops.get("apply", 0)), separation_residual=float(info["separation_residual"]),
        eig_residual=float(info["eig_residual"]),
        geometry="rational" if problem.geom.weights is not None else "polynomial",
        residual_history=list(stats.residuals),
    )
    return SolveResult(problem, x, full, stats, errs, report)


def run_single(cfg: RunConfig) -> BenchmarkReport:
    return solve(cfg).report


# --------------------------------------------------------------------------- studies

@dataclass
class ConvergenceRow:
    p_s: int
    p_t: int
    n_el: int
    n_dof: int
    iterations: int
    err_v0: float
    err_l2: float
    err_h1: float
    order_v0: float | None = None
    order_l2: float | None = None
    order_h1: float | None = None
    status: str = "ok"


def _order(prev: float, cur: float):
    if prev <= EXACT_THRESHOLD or cur <= EXACT_THRESHOLD:
        return None
    return observed_order(prev, cur)


def run_convergence(domain: str, degrees, n_els, base: RunConfig | None = None) -> list:
    """Errors and observed orders per ``(p_s, p_t)`` pair over a sequence of meshes."""
    n_els = sorted(n_els)
    if len(n_els) < 2:
        raise ConfigError("a convergence study needs at least two meshes")
    base = base or RunConfig(domain=domain)
    rows = []
    for p_s, p_t in degrees:
        prev = None
        for n in n_els:
            res = solve(base.replace(domain=domain, degree_space=p_s, degree_time=p_t, n_el=n, compute_errors=True))
            e = res.errors
            row = ConvergenceRow(p_s, p_t, n, res.problem.space.N_dof, res.stats.iterations, e.v0, e.l2, e.h1)
            if max(e.v0, e.l2, e.h1) <= EXACT_THRESHOLD:
                row.status = "exact"
            if prev is not None:
                row.order_v0 = _order(prev.err_v0, e.v0)
                row.order_l2 = _order(prev.err_l2, e.l2)
                row.order_h1 = _order(prev.err_h1, e.h1)
            log.info("convergence p_s=%d p_t=%d n_el=%d: V0 %.3e L2 %.3e H1 %.3e", p_s, p_t, n, e.v0, e.l2, e.h1)
            rows.append(row)
            prev = row
    return rows


@dataclass
class ComparisonRow:
    domain: str
    p: int
    n_el: int
    n_dof: int
    iterations_p: int
    iterations_pg: int
    time_p: float
    time_pg: float
    separation_residual: float

    @property
    def ratio(self) -> float:
        return self.iterations_pg / self.iterations_p


def compare_precond(domain: str, p: int, n_els, base: RunConfig | None = None) -> list:
    base = base or RunConfig(domain=domain)
    rows = []
    for n in n_els:
        cfg = base.replace(domain=domain, degree_space=p, degree_time=p, n_el=n, compute_errors=False)
        cfg.validate()
        with thread_limit(cfg.threads):
            problem = build_problem(cfg)
            op = problem.operator()
            out = {}
            for kind in ("p", "pg"):
                pc, info = build_preconditioner(problem, kind)
                _, st = solver.pcg(op, pc, problem.load.rhs, solver.PCGConfig(tol=cfg.tol, maxiter=cfg.maxiter),
                                   setup_time=info["setup_time"])
                out[kind] = (st, info)
        rows.append(ComparisonRow(domain, p, n, problem.space.N_dof, out["p"][0].iterations, out["pg"][0].iterations,
                                  out["p"][0].total_time, out["pg"][0].total_time,
                                  out["pg"][1]["separation_residual"]))
    return rows


@dataclass
class ScalingRow:
    n_el: int
    p: int
    n_dof: int
    setup_time: float
    apply_time: float
    apply_flops: int
    model_flops: int


@dataclass
class ScalingResult:
    rows: list
    apply_slope: float
    setup_slope: float


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def run_scaling(domain: str, p: int, n_els, repeats: int = 5, threads: int = 1, seed: int = 0) -> ScalingResult:
    """FD setup time and median single-application time per mesh.

    Only the univariate parametric factors are needed, so no 3D assembly is
    performed.
    """
    n_els = sorted(n_els)
    if len(n_els) < 2:
        raise ConfigError("a scaling study needs at least two meshes")
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    dim = make_domain(domain).dim
    rng = np.random.default_rng(seed)
    rows = []
    with thread_limit(threads):
        for n in n_els:
            space = make_space(p, p, n, dim)
            quad = assembly.default_quadrature(space)
            t0 = time.perf_counter()
            pf = assembly.assemble_parametric_factors(space, None, quad)
            pc = fd_precond.build_fd(pf, keep_factors=False)
            setup = time.perf_counter() - t0
            r = rng.standard_normal(space.N_dof)
            pc.apply(r)  # warm-up
            pc.counter.reset()
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                pc.apply(r)
                times.append(time.perf_counter() - t0)
            flops = pc.counter["fd_transform"] // repeats
            rows.append(ScalingRow(n, p, space.N_dof, setup, statistics.median(times), flops,
                                   pc.transform_flops_per_apply()))
            log.info("scaling n_el=%d N_dof=%d setup %.3es apply %.3es", n, space.N_dof, setup, rows[-1].apply_time)
    nd = [r.n_dof for r in rows]
    return ScalingResult(rows, loglog_slope(nd, [r.apply_time for r in rows]),
                         loglog_slope(nd, [r.setup_time for r in rows]))


def rows_to_csv(rows) -> str:
    if not rows:
        return ""
    names = [f.name for f in dataclasses.fields(rows[0])]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for r in rows:
        writer.writerow(["" if getattr(r, k) is None else getattr(r, k) for k in names])
    return buf.getvalue()


def write_outputs(out_dir, stem: str, rows, extra: dict | None = None) -> list:
    """Writes ``stem.csv`` and ``stem.json``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if rows and isinstance(rows[0], BenchmarkReport):
        csv_text = reports_to_csv(rows)
    else:
        csv_text = rows_to_csv(rows)
    payload = {"schema_version": SCHEMA_VERSION, "rows": [dataclasses.asdict(r) for r in rows]}
    if extra:
        payload.update(extra)
    paths = [out_dir / f"{stem}.csv", out_dir / f"{stem}.json"]
    paths[0].write_text(csv_text)
    paths[1].write_text(json.dumps(payload, indent=2))
    return paths
