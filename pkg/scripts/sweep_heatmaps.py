"""Closed-loop spectral-abscissa heatmaps over (u*, k) for three output maps."""

import argparse
import time
from pathlib import Path

import numpy as np

from epilab import analysis
from epilab.export import ExportTable, provenance, write_table
from epilab.model import C_REDESIGNED, C_STANDARD, C_SUM

OUTPUTS = {"x1_minus_x2": C_STANDARD, "x1_plus_x2": C_SUM, "x1_minus_029x2": C_REDESIGNED}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", type=Path)
    ap.add_argument("--step", type=float, default=0.05)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    u_axis, k_axis = analysis.sweep_axes(step=args.step)
    for name, c in OUTPUTS.items():
        t = time.perf_counter()
        grid = analysis.stability_sweep(u_axis, k_axis, c, threads=args.threads)
        uu, kk = np.meshgrid(grid.u_star_axis, grid.k_axis, indexing="ij")
        data = np.column_stack([uu.ravel(), kk.ravel(), grid.abscissa.ravel()])
        write_table(args.out / f"sweep_{name}.csv",
                    ExportTable(["u_star", "k", "abscissa"], data,
                                provenance("script", f"sweep_heatmaps {name}")))
        print(f"{name:>16}: {grid.stable_count():5d} stable of {grid.abscissa.size} cells "
              f"({time.perf_counter() - t:.1f} s)")


if __name__ == "__main__":
    main()
