#!/usr/bin/env python3
"""Regenerate the three reference figures as gnuplot-ready data files.

fig1  equilibrium branches and cycle envelope over the clearance
      coefficient delta at frozen immune status W = 0.9
fig2  the same over immune status W at delta = 0.3
fig3  slow manifold, status nullcline, and one infection trajectory
      in the (P, W) plane

Each figure gets its own output directory containing the raw CSVs, a
summary.json with every resolved parameter, and <figure>.dat with the
plot blocks. Plot with, e.g.:

    gnuplot -e "plot 'out/figures/fig1/fig1.dat' index 0 w l"
"""

import argparse
import sys
from pathlib import Path

from immunoepi import cli

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def run(argv):
    code = cli.main(argv)
    if code != 0:
        raise SystemExit(f"command failed ({code}): {' '.join(argv)}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--out-root", default="out/figures", help="directory for the figure data"
    )
    parser.add_argument(
        "--grid-refine", type=int, default=1,
        help="integer refinement of sweep and cycle resolutions",
    )
    args = parser.parse_args()
    root = Path(args.out_root)
    refine = ["--grid-refine", str(args.grid_refine)]

    for figure, config in (("fig1", "within_fig1.json"), ("fig2", "within_fig2.json")):
        out = root / figure
        run(["bifurcate", "--config", str(CONFIG_DIR / config), "--out", str(out), *refine])
        run(["plot-data", "--out", str(out), "--figure", figure])
        print(f"{figure}: {out / (figure + '.dat')}")

    out = root / "fig3"
    config = str(CONFIG_DIR / "within_sim.json")
    run(["within-sim", "--config", config, "--out", str(out), *refine])
    run(["manifold", "--config", config, "--out", str(out), *refine])
    run(["plot-data", "--out", str(out), "--figure", "fig3"])
    print(f"fig3: {out / 'fig3.dat'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
