"""Command-line front end.

    lodthermo mesh-info 6
    lodthermo inspect coefficients --preset example1
    lodthermo correctors --preset example1 --cache .cache
    lodthermo solve gfem --preset example2 --level 3
    lodthermo convergence --config my.ini --out out/ex1
    lodthermo compare-alpha --preset example2

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

from . import experiments
from .config import (
    ConfigError,
    ExperimentConfig,
    full_scale_schedule,
    load_config,
    preset,
    save_config,
    to_ini,
)
from .lod import CorrectorError
from .solvers import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
_UNSET = object()
THREADS_ENV = "LODTHERMO_THREADS"


def _k_arg(s: str):
    if s == "auto":
        return "auto"
    if s in ("inf", "infinity"):
        return None
    try:
        k = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'auto' or 'inf', got {s!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError("k must be >= 0")
    return k


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", metavar="PATH", help="experiment config (INI)")
    src.add_argument("--preset", choices=["example1", "example2"], help="built-in experiment")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--k", type=_k_arg, default=_UNSET, metavar="INT|auto",
                        help="patch size for every level; 'auto' uses k = round(c log2(1/H))")
    common.add_argument("--threads", type=int, metavar="INT",
                        help=f"parallel corrector builds (fallback: ${THREADS_ENV}, then the config)")
    common.add_argument("--paper-exact", action="store_true",
                        help="full schedule: m_F = 6, H down to sqrt(2)*2^-5, k = 1,1,2,2,3")
    common.add_argument("--no-alpha-correction", action="store_true", help="drop the alpha correctors")
    common.add_argument("--cache", metavar="DIR", help="corrector cache directory")
    common.add_argument("--timing", action="store_true", help="fill the wall_time_s CSV column")
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")

    p = argparse.ArgumentParser(prog="lodthermo", description="LOD multiscale solver for thermoelasticity")
    sub = p.add_subparsers(dest="command", required=True)

    mi = sub.add_parser("mesh-info", help="vertex/triangle counts of a uniform mesh")
    mi.add_argument("level", type=int)
    mi.add_argument("--write-off", metavar="PATH", help="also write the mesh in OFF format")

    ins = sub.add_parser("inspect", parents=[common], help="summaries of mesh, coefficients or basis")
    ins.add_argument("target", choices=experiments.TARGETS)
    ins.add_argument("--level", type=int, help="coarse level for target=basis")

    sub.add_parser("correctors", parents=[common], help="build (and cache) all multiscale bases")

    so = sub.add_parser("solve", parents=[common], help="one solver run, history exported as CSV")
    so.add_argument("mode", choices=experiments.MODES)
    so.add_argument("--level", type=int, help="coarse level (default: finest configured)")

    sub.add_parser("convergence", parents=[common], help="error sweep over the coarse levels")
    sub.add_parser("compare-alpha", parents=[common], help="GFEM with and without alpha correction")
    sub.add_parser("write-config", parents=[common], help="print the resolved config as INI")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.paper_exact:
            cfg = full_scale_schedule(cfg)
    else:
        cfg = preset(args.preset or "example1", args.paper_exact)
    changes = {}
    if args.out:
        changes["output_dir"] = args.out
    if args.k is not _UNSET:
        changes["k_schedule"] = None if args.k == "auto" else (args.k,) * len(cfg.coarse_levels)
    if args.no_alpha_correction:
        changes["alpha_correction"] = False
    threads = resolve_threads(args.threads)
    if threads is not None:
        changes["threads"] = threads
    return cfg.with_overrides(**changes) if changes else cfg


def resolve_threads(flag: Optional[int]) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected an integer, got {env!r}") from None


def _run(args) -> int:
    if args.command == "mesh-info":
        if args.level < 0:
            raise ConfigError("level", "must be >= 0")
        print(experiments.mesh_info(args.level))
        if args.write_off:
            experiments.build_uniform_mesh(args.level).write_off(args.write_off)
        return EXIT_OK
    cfg = resolve_config(args)
    if args.command == "write-config":
        sys.stdout.write(to_ini(cfg))
        return EXIT_OK
    if args.command == "inspect":
        for line in experiments.inspect(cfg, args.target, m_coarse=args.level):
            print(line)
    elif args.command == "correctors":
        cache = args.cache or os.path.join(cfg.output_dir, "cache")
        for line in experiments.build_all_correctors(cfg, cache_dir=cache):
            print(line)
    elif args.command == "solve":
        _, path = experiments.run_single(cfg, args.mode, m_coarse=args.level, cache_dir=args.cache)
        print(path)
    elif args.command in ("convergence", "compare-alpha"):
        fn = experiments.run_convergence if args.command == "convergence" else experiments.compare_alpha
        result = fn(cfg, cache_dir=args.cache, timing=args.timing)
        for method, recs in result.records.items():
            for r in recs:
                print(f"{method:12s} H={r.H:.5f} k={'inf' if r.k is None else r.k!s:>3} "
                      f"rel_err_u={r.rel_err_u:.4e} rel_err_theta={r.rel_err_theta:.4e}")
        for f in result.files:
            print(f)
        save_config(cfg, os.path.join(cfg.output_dir, "config.ini"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CorrectorError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
