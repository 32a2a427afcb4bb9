"""Experiment configuration, data preparation and replication studies.

Configs are flat ``key = value`` files with dotted keys (``umdac.M = 60``).
Vectors are comma separated.  Built-in presets hold the two case studies and
the linear reference model; a config file or CLI override only needs the keys
it changes.

Streams: the observation series of a study comes from ``(seed, stream 0)``;
repetition ``r = 1..R`` runs its optimizer on ``(seed, stream r)``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .llfilter import DEFAULT_SUBSTEPS, PENALTY
from .local import LocalConfig, local_minimize, random_start, refined_estimate
from .models import EstimationProblem, as_box, get_model
from .objective import DEFAULT_LIN_TOL, InnovationObjective
from .rng import RngStream
from .simulate import ObservationSeries, generate_observations, simulate_path, subsample
from .umdac import EstimationResult, UmdacConfig, umdac_minimize

ALGORITHMS = ("umdac", "refined", "loa")
HIST_BINS = 20
DATA_STREAM = 0


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str = "fhn"
    alpha: tuple = (1.0, 1.0, 0.1)
    x0: tuple = (-0.9323, -0.6732)
    h: float = 0.0005
    # fine steps; None means exactly enough for N observation gaps
    n_steps: Optional[int] = None
    delta: float = 0.5
    N: int = 500
    box_lo: tuple = (0.0, 0.0, 0.0)
    box_hi: tuple = (5.0, 5.0, 1.0)
    # filter start; None means the true x0
    y0: Optional[tuple] = None
    q0_scale: float = 1e-2
    initial_update: bool = False
    substeps: int = DEFAULT_SUBSTEPS
    lin_tol: float = DEFAULT_LIN_TOL
    algo: str = "umdac"
    umdac: UmdacConfig = field(default_factory=UmdacConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    reps: int = 10
    seed: int = 0
    out: str = "results"
    jobs: int = 1
    observations: Optional[str] = None
    trajectory_thin: int = 1
    slice_coord: int = 1
    slice_grid: int = 41
    slice_center: Optional[tuple] = None

    def validate(self) -> "ExperimentConfig":
        if self.model not in PRESETS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(PRESETS)}")
        model = get_model(self.model)
        for name, vec, size in (("alpha", self.alpha, model.p), ("box.lo", self.box_lo, model.p),
                                ("box.hi", self.box_hi, model.p), ("x0", self.x0, model.d)):
            if len(vec) != size:
                raise ConfigError(f"{name} needs {size} values, got {len(vec)}")
        if self.y0 is not None and len(self.y0) != model.d:
            raise ConfigError(f"filter.y0 needs {model.d} values")
        if any(lo > hi for lo, hi in zip(self.box_lo, self.box_hi)):
            raise ConfigError("box.lo must not exceed box.hi")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if self.h <= 0 or self.delta <= 0 or self.N < 0:
            raise ConfigError("need h > 0, delta > 0 and N >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.jobs < 1 or self.trajectory_thin < 1:
            raise ConfigError("jobs and trajectory thinning must be at least 1")
        return self

    @property
    def box(self):
        return as_box(self.box_lo, self.box_hi, get_model(self.model).param_names, self.alpha)


PRESETS = {
    "fhn": dict(),
    "mult": dict(model="mult", alpha=(1.0, -1.5, 0.1, -1.0, 0.01), x0=(0.5, 0.5), h=0.005,
                delta=0.5, N=500, box_lo=(0.0, -3.0, 0.0, -3.0, 0.0),
                box_hi=(2.0, 0.0, 0.3, 0.0, 0.1), umdac=UmdacConfig(M=100), slice_coord=3),
    "ou": dict(model="ou", alpha=(1.0,), x0=(0.5,), h=0.001, delta=0.5, N=200,
               box_lo=(0.2,), box_hi=(3.0,), umdac=UmdacConfig(M=20, generations=30)),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**PRESETS[name])


# --- key = value parsing ------------------------------------------------------------------

def _vector(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _optional_vector(text: str):
    return None if text.strip().lower() in ("", "none") else _vector(text)


def _boolean(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _str(text: str) -> str:
    return text.strip()


def _optional_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


# dotted key -> (attribute path, parser)
KEYS = {
    "model": ("model", _str),
    "alpha": ("alpha", _vector),
    "x0": ("x0", _vector),
    "sim.h": ("h", float),
    "sim.n_steps": ("n_steps", _optional_int),
    "sim.thin": ("trajectory_thin", int),
    "obs.delta": ("delta", float),
    "obs.N": ("N", int),
    "obs.file": ("observations", _optional_str),
    "box.lo": ("box_lo", _vector),
    "box.hi": ("box_hi", _vector),
    "filter.y0": ("y0", _optional_vector),
    "filter.q0_scale": ("q0_scale", float),
    "filter.initial_update": ("initial_update", _boolean),
    "filter.substeps": ("substeps", int),
    "filter.lin_tol": ("lin_tol", float),
    "algo": ("algo", _str),
    "reps": ("reps", int),
    "seed": ("seed", int),
    "out": ("out", _str),
    "jobs": ("jobs", int),
    "umdac.M": ("umdac.M", int),
    "umdac.tau": ("umdac.tau", float),
    "umdac.elite_frac": ("umdac.elite_frac", float),
    "umdac.generations": ("umdac.generations", int),
    "umdac.early_stop_value": ("umdac.early_stop_value", _optional_float),
    "local.max_iters": ("local.max_iters", _optional_int),
    "local.x_tol": ("local.x_tol", _optional_float),
    "local.f_tol": ("local.f_tol", float),
    "slice.coord": ("slice_coord", int),
    "slice.grid": ("slice_grid", int),
    "slice.center": ("slice_center", _optional_vector),
}


def parse_lines(text: str) -> list[tuple[str, str]]:
    """``(key, value)`` pairs from ``key = value`` lines; ``#`` starts a comment."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((key, value))
    return pairs


def apply(config: ExperimentConfig, pairs) -> ExperimentConfig:
    """New config with the ``(key, value)`` overrides applied in order."""
    top: dict = {}
    nested: dict = {"umdac": {}, "local": {}}
    for key, value in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parse = KEYS[key]
        try:
            parsed = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        if "." in attr:
            group, name = attr.split(".")
            nested[group][name] = parsed
        else:
            top[attr] = parsed
    if "model" in top and top["model"] != config.model:
        # switching model restarts from that model's preset
        config = preset(top["model"])
    try:
        cfg = dataclasses.replace(
            config, **top,
            umdac=dataclasses.replace(config.umdac, **nested["umdac"]),
            local=dataclasses.replace(config.local, **nested["local"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load_config(path: Optional[str] = None, overrides=(), model: Optional[str] = None) -> ExperimentConfig:
    pairs = []
    if path is not None:
        pairs += parse_lines(Path(path).read_text())
    pairs += list(overrides)
    names = [v for k, v in pairs if k == "model"]
    base = preset(model or (names[0] if names else "fhn"))
    return apply(base, pairs)


def dump_config(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, tuple):
            return ", ".join(format_real(x) for x in v)
        if isinstance(v, bool):
            return str(v).lower()
        if isinstance(v, float):
            return format_real(v)
        return str(v)

    lines = []
    for key, (attr, _) in KEYS.items():
        obj = cfg
        for part in attr.split("."):
            obj = getattr(obj, part)
        lines.append(f"{key} = {fmt(obj)}")
    return "\n".join(lines) + "\n"


# --- data and problems ---------------------------------------------------------------------

def format_real(v) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_real(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_observations(path) -> ObservationSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if data.size == 0:
        raise ConfigError(f"{path} holds no observations")
    return ObservationSeries(data[:, 0], data[:, 1:])


def simulate_data(cfg: ExperimentConfig):
    """Fine-grid path and observations from the study's data stream."""
    model = get_model(cfg.model)
    stride = int(round(cfg.delta / cfg.h))
    needed = max(cfg.N * stride, 1)
    n_steps = cfg.n_steps if cfg.n_steps is not None else needed
    if n_steps < needed:
        raise ConfigError(f"sim.n_steps = {n_steps} is shorter than N*delta/h = {needed}")
    stream = RngStream(cfg.seed, DATA_STREAM)
    path_stream, obs_stream = stream.split(2)
    traj = simulate_path(model, cfg.alpha, cfg.x0, 0.0, cfg.h, n_steps, path_stream)
    states = subsample(traj, cfg.delta, cfg.N)
    times = cfg.delta * np.arange(cfg.N + 1)
    return traj, generate_observations(model, states, times, obs_stream)


def build_problem(cfg: ExperimentConfig, observations: Optional[ObservationSeries] = None) -> EstimationProblem:
    model = get_model(cfg.model)
    if observations is None:
        observations = (read_observations(cfg.observations) if cfg.observations
                        else simulate_data(cfg)[1])
    y0 = np.asarray(cfg.y0 if cfg.y0 is not None else cfg.x0, dtype=float)
    return EstimationProblem(model, observations, cfg.box, y0, cfg.q0_scale * np.eye(model.d),
                             cfg.initial_update)


def run_algorithm(problem: EstimationProblem, cfg: ExperimentConfig, stream_id: int) -> EstimationResult:
    """One estimation with the configured algorithm on ``(seed, stream_id)``."""
    stream = RngStream(cfg.seed, stream_id)
    ucfg = dataclasses.replace(cfg.umdac, substeps=cfg.substeps, lin_tol=cfg.lin_tol)
    lcfg = dataclasses.replace(cfg.local, substeps=cfg.substeps, lin_tol=cfg.lin_tol)
    if cfg.algo == "umdac":
        return umdac_minimize(problem, ucfg, stream)
    if cfg.algo == "refined":
        return refined_estimate(problem, ucfg, lcfg, stream)
    return local_minimize(problem, random_start(problem.box, stream), problem.box, lcfg)


# --- replication ----------------------------------------------------------------------------

@dataclass
class ReplicationSummary:
    names: tuple
    estimates: np.ndarray
    fitness: np.ndarray
    converged: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    edges: list
    counts: list
    failures: int
    runtime: float
    results: list = field(default_factory=list)


def summarize(results: list[EstimationResult], box, names, runtime: float = 0.0) -> ReplicationSummary:
    est = np.array([r.alpha_hat for r in results], dtype=float).reshape(len(results), box.p)
    fit = np.array([r.fitness for r in results], dtype=float)
    ok = np.array([r.converged and r.fitness < PENALTY for r in results], dtype=bool)
    good = est[ok]
    if len(good):
        mn, mx, mean = good.min(0), good.max(0), good.mean(0)
        std = good.std(0, ddof=1) if len(good) > 1 else np.zeros(box.p)
    else:
        mn = mx = mean = std = np.full(box.p, np.nan)
    edges, counts = [], []
    for i in range(box.p):
        lo, hi = box.lo[i], box.hi[i]
        if hi == lo:
            hi = lo + 1.0
        e = np.linspace(lo, hi, HIST_BINS + 1)
        c, _ = np.histogram(good[:, i], bins=e)
        edges.append(e)
        counts.append(c)
    return ReplicationSummary(tuple(names), est, fit, ok, mn, mx, mean, std, edges, counts,
                              int((~ok).sum()), runtime, list(results))


def _rep_worker(args):
    cfg, rep = args
    problem = build_problem(cfg)
    return run_algorithm(problem, cfg, rep)


def replicate(cfg: ExperimentConfig, problem: Optional[EstimationProblem] = None) -> ReplicationSummary:
    """``cfg.reps`` estimations on one observation series, repetition ``r`` on stream ``r``."""
    started = time.perf_counter()
    reps = range(1, cfg.reps + 1)
    if cfg.jobs > 1 and problem is None:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_rep_worker, [(cfg, r) for r in reps]))
    else:
        problem = problem if problem is not None else build_problem(cfg)
        results = [run_algorithm(problem, cfg, r) for r in reps]
    return summarize(results, cfg.box, cfg.box.names, time.perf_counter() - started)


def write_replication(summary: ReplicationSummary, cfg: ExperimentConfig, out: Path):
    names = summary.names
    write_csv(out / "summary.csv", ["parameter", "min", "max", "mean", "std", "failures"],
              [(n, summary.minimum[i], summary.maximum[i], summary.mean[i], summary.std[i],
                summary.failures) for i, n in enumerate(names)])
    rows = []
    for i, n in enumerate(names):
        for j in range(HIST_BINS):
            rows.append((n, summary.edges[i][j], summary.edges[i][j + 1], int(summary.counts[i][j])))
    write_csv(out / "histograms.csv", ["parameter", "bin_lo", "bin_hi", "count"], rows)
    write_csv(out / "runs.csv", result_header(names, with_rep=True),
              [result_row(r, cfg, rep) for rep, r in enumerate(summary.results, 1)])
    write_csv(out / "timing.csv", ["rep", "wall_time"],
              [(rep, r.wall_time) for rep, r in enumerate(summary.results, 1)]
              + [("total", summary.runtime)])


def result_header(names, with_rep=False):
    head = ["rep"] if with_rep else []
    return head + ["algorithm", "seed", *names, "fitness", "evaluations", "converged"]


def result_row(r: EstimationResult, cfg: ExperimentConfig, rep: Optional[int] = None):
    head = [rep] if rep is not None else []
    return head + [r.algorithm, cfg.seed, *[float(v) for v in r.alpha_hat], float(r.fitness),
                   r.evaluations, str(bool(r.converged)).lower()]


def fitness_slice(problem: EstimationProblem, center, coord: int, grid: int,
                  substeps: int = DEFAULT_SUBSTEPS, lin_tol: float = DEFAULT_LIN_TOL):
    """``(value, q)`` pairs sweeping 1-based coordinate ``coord`` over its box interval."""
    box = problem.box
    if not 1 <= coord <= box.p:
        raise ConfigError(f"coordinate {coord} outside 1..{box.p}")
    if grid < 2:
        raise ConfigError("slice grid needs at least 2 points")
    objective = InnovationObjective(problem, substeps, lin_tol)
    values = np.linspace(box.lo[coord - 1], box.hi[coord - 1], grid)
    out = []
    for v in values:
        alpha = np.array(center, dtype=float)
        alpha[coord - 1] = v
        out.append((float(v), objective(alpha).value))
    return out


def q_range(pairs) -> float:
    q = np.array([v for _, v in pairs])
    q = q[q < PENALTY]
    return float(q.max() - q.min()) if q.size else math.inf
