"""Slice q along every coordinate of a model and print each slice's q-range.

    python3 scripts/fitness_slices.py --model mult [--center 1,-1.5,0.1,-1,0.01] [--grid 41]
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from innovest.experiments import build_problem, fitness_slice, preset, q_range, write_csv


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default="mult", choices=("fhn", "mult", "ou"))
    p.add_argument("--center", help="comma-separated center (default: true alpha)")
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for slice_<name>.csv files")
    a = p.parse_args(argv)
    cfg = preset(a.model)
    cfg.seed = a.seed
    problem = build_problem(cfg)
    center = np.array([float(v) for v in a.center.split(",")]) if a.center else np.asarray(cfg.alpha)
    for coord, name in enumerate(problem.box.names, 1):
        pairs = fitness_slice(problem, center, coord, a.grid, cfg.substeps, cfg.lin_tol)
        print(f"{name:>8}: q-range {q_range(pairs):.6g}")
        if a.out:
            write_csv(Path(a.out) / f"slice_{name}.csv", [name, "q"], pairs)
    return 0


if __name__ == "__main__":
    sys.exit(run())
