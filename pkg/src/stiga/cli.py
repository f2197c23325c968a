"""Command line interface: ``stiga {solve,convergence,scaling,compare-precond,validate}``.

Exit codes: 0 success, 2 non-convergence, 3 invalid configuration,
4 resource refusal.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness
from .exceptions import ArgumentError, ConfigError, ResourceError

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3, 4

log = logging.getLogger("stiga")


def _common(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--config", type=Path, help="JSON run configuration; flags override its values")
    p.add_argument("--domain", choices=sorted(harness.DOMAINS))
    p.add_argument("--degree-space", type=int, nargs=nargs)
    p.add_argument("--degree-time", type=int, nargs=nargs)
    p.add_argument("--nel", type=int, nargs=nargs, help="elements per space-time direction")
    p.add_argument("--final-time", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--solution", help="manufactured solution name (default: the domain's benchmark)")
    p.add_argument("--out", type=Path, help=f"output directory (default ${harness.OUTPUT_ENV} or ./results)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stiga", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one configuration")
    _common(p)
    p.add_argument("--precond", choices=harness.PRECONDITIONERS)
    p.add_argument("--maxiter", type=int)

    p = sub.add_parser("convergence", help="errors and observed orders over a mesh sequence")
    _common(p, multi=True)

    p = sub.add_parser("scaling", help="FD setup and application timings")
    _common(p, multi=True)
    p.add_argument("--repeats", type=int, default=5)

    p = sub.add_parser("compare-precond", help="iteration counts with P and P^G")
    _common(p, multi=True)

    p = sub.add_parser("validate", help="small-instance oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _first(v):
    return v[0] if isinstance(v, list) else v


def config_from_args(args) -> harness.RunConfig:
    cfg = harness.RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = harness.RunConfig.from_json(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    overrides = {
        "domain": args.domain, "degree_space": _first(args.degree_space), "degree_time": _first(args.degree_time),
        "n_el": _first(args.nel), "final_time": args.final_time, "tol": args.tol, "threads": args.threads,
        "solution": args.solution, "precond": getattr(args, "precond", None), "maxiter": getattr(args, "maxiter", None),
    }
    cfg = cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
    if args.out is not None:
        cfg = cfg.replace(out=str(args.out))
    return cfg


def _out_dir(args, cfg=None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return harness.default_output_dir()


def _degree_pairs(args, cfg) -> list:
    ps = args.degree_space or [cfg.degree_space]
    pt = args.degree_time or [cfg.degree_time]
    if len(ps) == 1 and len(pt) > 1:
        ps = ps * len(pt)
    if len(pt) == 1 and len(ps) > 1:
        pt = pt * len(ps)
    if len(ps) != len(pt):
        raise ConfigError("--degree-space and --degree-time lists must have equal length")
    return list(zip(ps, pt))


def cmd_solve(args) -> int:
    cfg = config_from_args(args).validate()
    report = harness.run_single(cfg)
    paths = harness.write_outputs(_out_dir(args, cfg), "solve", [report], {"config": cfg.to_dict()})
    print(f"{cfg.domain} p_s={cfg.degree_space} p_t={cfg.degree_time} n_el={cfg.n_el} precond={cfg.precond}: "
          f"N_dof={report.n_dof} iterations={report.iterations} converged={report.converged} "
          f"V0={report.err_v0:.3e} L2={report.err_l2:.3e} H1={report.err_h1:.3e} time={report.total_time:.2f}s")
    print(f"wrote {', '.join(map(str, paths))}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_convergence(args) -> int:
    cfg = config_from_args(args).validate()
    nels = args.nel or [8, 16, 32]
    rows = harness.run_convergence(cfg.domain, _degree_pairs(args, cfg), nels, cfg)
    for r in rows:
        orders = "" if r.order_v0 is None else f"  orders V0 {r.order_v0:.2f} L2 {r.order_l2:.2f} H1 {r.order_h1:.2f}"
        print(f"p_s={r.p_s} p_t={r.p_t} n_el={r.n_el:3d} V0 {r.err_v0:.3e} L2 {r.err_l2:.3e} H1 {r.err_h1:.3e}"
              f" [{r.status}]{orders}")
    harness.write_outputs(_out_dir(args, cfg), "convergence", rows, {"config": cfg.to_dict()})
    return EXIT_OK


def cmd_scaling(args) -> int:
    cfg = config_from_args(args).validate()
    nels = args.nel or [8, 16, 32]
    res = harness.run_scaling(cfg.domain, cfg.degree_space, nels, repeats=args.repeats, threads=cfg.threads,
                              seed=cfg.seed)
    for r in res.rows:
        print(f"n_el={r.n_el:3d} N_dof={r.n_dof:9d} setup {r.setup_time:.3e}s apply {r.apply_time:.3e}s "
              f"flops {r.apply_flops} (model {r.model_flops})")
    print(f"log-log slope: apply {res.apply_slope:.3f}, setup {res.setup_slope:.3f}")
    harness.write_outputs(_out_dir(args, cfg), "scaling", res.rows,
                          {"apply_slope": res.apply_slope, "setup_slope": res.setup_slope})
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = config_from_args(args).validate()
    nels = args.nel or [8, 16]
    rows = harness.compare_precond(cfg.domain, cfg.degree_space, nels, cfg)
    for r in rows:
        print(f"n_el={r.n_el:3d} N_dof={r.n_dof} P {r.iterations_p} it ({r.time_p:.2f}s)  "
              f"P^G {r.iterations_pg} it ({r.time_pg:.2f}s)  ratio {r.ratio:.3f}")
    harness.write_outputs(_out_dir(args, cfg), "compare_precond", rows, {"config": cfg.to_dict()})
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_validation

    checks = run_validation(seed=args.seed)
    for c in checks:
        print(c.line())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "validate.json").write_text(json.dumps([dataclasses.asdict(c) for c in checks], indent=2))
    return EXIT_OK if all(c.passed for c in checks) else 1


COMMANDS = {"solve": cmd_solve, "convergence": cmd_convergence, "scaling": cmd_scaling,
            "compare-precond": cmd_compare, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ArgumentError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
