"""FitzHugh-Nagumo replication study: UMDAc and refined runs on one series.

    python3 scripts/run_fhn_study.py [--reps 10] [--out results/fhn]
"""

import argparse
import sys

from innovest.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/fhn")
    a = p.parse_args(argv)
    common = ["--model", "fhn", "--reps", str(a.reps), "--seed", str(a.seed), "--jobs", str(a.jobs)]
    for algo in ("umdac", "refined"):
        code = main(["replicate", *common, "--algo", algo, "--out", f"{a.out}/{algo}"])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
