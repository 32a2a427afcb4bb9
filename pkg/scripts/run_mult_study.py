"""Multiplicative-noise study: replicate UMDAc, then slice q through the mean estimate.

    python3 scripts/run_mult_study.py [--reps 10] [--out results/mult]
"""

import argparse
import sys

from innovest.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--out", default="results/mult")
    a = p.parse_args(argv)
    base = ["--model", "mult", "--seed", str(a.seed)]
    code = main(["replicate", *base, "--reps", str(a.reps), "--out", f"{a.out}/replicate"])
    if code:
        return code
    for coord in range(1, 6):
        code = main(["fitness-slice", *base, "--coord", str(coord), "--grid", str(a.grid),
                     "--center-from", f"{a.out}/replicate", "--out", f"{a.out}/slices"])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
