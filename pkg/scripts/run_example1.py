"""Composite-material convergence study (GFEM vs coarse P1-P1 FEM).

    python3 scripts/run_example1.py               # desk scale, m_F = 5
    python3 scripts/run_example1.py --paper-exact # m_F = 6, five coarse levels
"""
import argparse
import logging

from lodthermo.config import example1
from lodthermo.experiments import run_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--paper-exact", action="store_true")
    p.add_argument("--out", default="out/example1")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cache")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = example1(args.paper_exact).with_overrides(output_dir=args.out, threads=args.threads)
    result = run_convergence(cfg, cache_dir=args.cache, timing=True)
    for method, recs in result.records.items():
        print(method)
        for r in recs:
            print(f"  H={r.H:.4f} k={r.k!s:>2} u={r.rel_err_u:.3e} theta={r.rel_err_theta:.3e} ({r.wall_time_s:.1f}s)")


if __name__ == "__main__":
    main()
