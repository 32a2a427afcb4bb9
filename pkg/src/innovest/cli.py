"""Command line front end: ``python -m innovest <command> [options]``.

Commands: simulate, estimate, replicate, filter, fitness-slice.  Any config
key is also accepted as a flag, e.g. ``--umdac.M 30`` or ``--obs.N=100``.
Exit codes: 0 success, 1 usage or config error, 2 I/O error, 3 simulation
divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .experiments import (KEYS, ConfigError, build_problem, dump_config, fitness_slice, load_config,
                          replicate, result_header, result_row, run_algorithm, simulate_data,
                          write_csv, write_replication)
from .llfilter import run_filter
from .simulate import SimulationDivergence

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGENCE = 0, 1, 2, 3
COMMANDS = ("simulate", "estimate", "replicate", "filter", "fitness-slice")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="innovest", description="Innovation-method estimation for discretely observed diffusions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--model", choices=("fhn", "mult", "ou"), help="start from this preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--algo", choices=("umdac", "refined", "loa"))
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--at", help="comma-separated parameter vector for `filter` (default: true alpha)")
    p.add_argument("--coord", type=int, help="1-based coordinate for `fitness-slice`")
    p.add_argument("--grid", type=int, help="grid points for `fitness-slice`")
    p.add_argument("--center-from", help="replicate output directory whose mean centers the slice")
    return p


def _dotted_overrides(extra: list[str]) -> list[tuple[str, str]]:
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            i += 1
            value = extra[i]
        if key not in KEYS:
            raise UsageError(f"unknown option --{key}")
        pairs.append((key, value))
        i += 1
    return pairs


def config_from_args(args, extra):
    pairs = _dotted_overrides(extra)
    for flag in ("seed", "out", "algo", "reps", "jobs"):
        value = getattr(args, flag)
        if value is not None:
            pairs.append((flag, str(value)))
    if args.coord is not None:
        pairs.append(("slice.coord", str(args.coord)))
    if args.grid is not None:
        pairs.append(("slice.grid", str(args.grid)))
    return load_config(args.config, pairs, model=args.model)


def _parse_vector(text: str, size: int) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"bad vector {text!r}") from None
    if v.size != size:
        raise UsageError(f"expected {size} comma-separated values, got {v.size}")
    return v


def cmd_simulate(cfg, args, out: Path):
    traj, obs = simulate_data(cfg)
    t = traj.times
    thin = cfg.trajectory_thin
    d = traj.states.shape[1]
    write_csv(out / "trajectory.csv", ["t", *[f"x{i + 1}" for i in range(d)]],
              ([float(t[j]), *map(float, traj.states[j])] for j in range(0, len(t), thin)))
    write_csv(out / "observations.csv", ["t", *[f"z{i + 1}" for i in range(obs.values.shape[1])]],
              ([float(tk), *map(float, z)] for tk, z in zip(obs.times, obs.values)))
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"seed {cfg.seed}: {len(obs.times)} observations, {traj.n_clamped} clamped states -> {out}")


def cmd_estimate(cfg, args, out: Path):
    problem = build_problem(cfg)
    result = run_algorithm(problem, cfg, 1)
    names = problem.box.names
    write_csv(out / "estimate.csv", result_header(names), [result_row(result, cfg)])
    write_csv(out / "timing.csv", ["run", "wall_time"], [("estimate", result.wall_time)])
    if cfg.algo in ("umdac", "refined"):
        p = problem.box.p
        header = ["generation", "best", "mean", *[f"mu{i + 1}" for i in range(p)],
                  *[f"sigma{i + 1}" for i in range(p)]]
        write_csv(out / "trace.csv", header,
                  ([g, rec.best, rec.mean, *map(float, rec.mu), *map(float, rec.sigma)]
                   for g, rec in enumerate(result.trace, 1)))
    (out / "config.txt").write_text(dump_config(cfg))
    est = ", ".join(f"{n}={v:.6g}" for n, v in zip(names, result.alpha_hat))
    print(f"{cfg.algo}: {est}  q={result.fitness:.10g}  evaluations={result.evaluations}  "
          f"converged={result.converged}")


def cmd_replicate(cfg, args, out: Path):
    summary = replicate(cfg)
    write_replication(summary, cfg, out)
    (out / "config.txt").write_text(dump_config(cfg))
    for i, n in enumerate(summary.names):
        print(f"{n}: [{summary.minimum[i]:.6g}, {summary.maximum[i]:.6g}] mean {summary.mean[i]:.6g} "
              f"sd {summary.std[i]:.3g}")
    print(f"failures {summary.failures}/{cfg.reps}, runtime {summary.runtime:.1f} s")


def cmd_filter(cfg, args, out: Path):
    problem = build_problem(cfg)
    alpha = _parse_vector(args.at, problem.model.p) if args.at else np.asarray(cfg.alpha, float)
    run = run_filter(problem, alpha, substeps=cfg.substeps, lin_tol=cfg.lin_tol)
    r, d = problem.model.r, problem.model.d
    header = ["t", *[f"nu{i + 1}" for i in range(r)], *[f"var{i + 1}" for i in range(r)],
              *[f"y{i + 1}" for i in range(d)]]
    rows = ([float(run.times[k]), *map(float, run.innovations[k]),
             *map(float, np.diag(run.innovation_covs[k])), *map(float, run.filtered_means[k])]
            for k in range(len(run.times)))
    write_csv(out / "filter.csv", header, rows)
    print(f"q = {run.fitness:.17g} ({run.status})")


def _center_from(path: str, p: int) -> np.ndarray:
    with open(Path(path) / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != p:
        raise ConfigError(f"{path}/summary.csv has {len(rows)} parameters, expected {p}")
    return np.array([float(row["mean"]) for row in rows])


def cmd_fitness_slice(cfg, args, out: Path):
    problem = build_problem(cfg)
    p = problem.model.p
    if args.center_from:
        center = _center_from(args.center_from, p)
    elif cfg.slice_center is not None:
        center = np.asarray(cfg.slice_center, float)
    else:
        center = np.asarray(cfg.alpha, float)
    if center.size != p:
        raise ConfigError(f"slice center needs {p} values")
    pairs = fitness_slice(problem, center, cfg.slice_coord, cfg.slice_grid, cfg.substeps, cfg.lin_tol)
    name = problem.box.names[cfg.slice_coord - 1]
    write_csv(out / f"slice_{name}.csv", [name, "q"], pairs)
    q = np.array([v for _, v in pairs])
    print(f"{name}: q in [{q.min():.10g}, {q.max():.10g}] over {len(pairs)} points")


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "replicate": cmd_replicate,
            "filter": cmd_filter, "fitness-slice": cmd_fitness_slice}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        cfg = config_from_args(args, extra)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, args, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
