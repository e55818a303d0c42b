"""Energy-norm gap between localized and global correctors as k grows.

Writes ``decay.dat`` with columns ``k gap_elasticity gap_thermal`` (gaps are
relative to the global corrector energy).

    python3 scripts/decay_study.py --coarse 2 --fine 4 --kmax 6
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from lodthermo.config import example1
from lodthermo.lod import build_corrector_set, build_field_context, energy_norms
from lodthermo.mesh import build_hierarchy


def relative_gap(ctx, k, R_global):
    R = build_corrector_set(ctx, k).matrix
    gap = np.linalg.norm(energy_norms(R - R_global, ctx.A))
    return gap / np.linalg.norm(energy_norms(R_global, ctx.A))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--coarse", type=int, default=2)
    p.add_argument("--fine", type=int, default=4)
    p.add_argument("--kmax", type=int, default=6)
    p.add_argument("--out", default="out/decay")
    args = p.parse_args()
    cfg = example1()
    # the composite raster is coarsened when the fine mesh cannot resolve 32 cells
    spec = replace(cfg.coefficients, raster_cells=min(cfg.coefficients.raster_cells, 2 ** args.fine))
    coeffs = spec.build(args.fine)
    h = build_hierarchy(args.coarse, args.fine)
    ctxs = [build_field_context(h, coeffs, cfg.boundary, name) for name in ("elasticity", "thermal")]
    glob = [build_corrector_set(c, None).matrix for c in ctxs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "decay.dat", "w") as fh:
        fh.write("# k gap_elasticity gap_thermal\n")
        for k in range(1, args.kmax + 1):
            gaps = [relative_gap(c, k, g) for c, g in zip(ctxs, glob)]
            fh.write(f"{k} {gaps[0]:.6e} {gaps[1]:.6e}\n")
            print(f"k={k}: elasticity {gaps[0]:.3e}  thermal {gaps[1]:.3e}")


if __name__ == "__main__":
    main()
