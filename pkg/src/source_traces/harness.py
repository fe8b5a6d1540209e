"""Seeded experiment runner.

An experiment is one environment family (a batch of seeded environments),
a list of learners, each expanded into a grid of step-size settings, and a
horizon.  Every learner sees the same environments and, per environment, the
same trajectory and replay draws.

Config files are flat ``key = value`` text::

    # comment
    name = fig2-left
    env = gridworld3d            # or random_mrp
    gamma = 0.95
    dims = 10,10,10              # gridworld3d
    reward_states = 50           # gridworld3d
    num_states = 100             # random_mrp
    out_degree = 5               # random_mrp
    batch = 30
    seed = 2017
    horizon = 100000
    checkpoint_every = 1000
    targets = 3,2,1.5            # optional, for steps-to-target tables
    reward_noise = 0             # optional std of additive reward noise
    learner = S4 source map=partial:4:1 alpha=paper-grid

A ``learner`` line is ``learner = <id> <algorithm> [key=value ...]`` with keys

    alpha, beta      schedule list or preset (see ``schedules``)
    lambda           comma list of values, or ``grid`` for 0, 0.1, ..., 1
    lambda_final, lambda_steps     linear lambda annealing
    map              exact | partial:N:LAM | lambda:LAM  (fixed source map)
    model            fixed | source | sr | source_sr | transition
    replay           replayed transitions per real step
    replay_model     yes | no   (replayed steps also update the model)
    is_cap, row_first, reward_rate, m, s_error

The grid of a learner is the product alpha x beta x lambda.

Seeds: environment ``i`` of a batch is generated from
``derive_seed(seed, "env", i)``; its trajectory, replay and iLSTD draws use
streams ``trajectory``, ``replay`` and ``ilstd`` keyed by ``(seed, i)``.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, fmt
from .envs import GRIDWORLD_3D, RANDOM_MRP, EnvSpec, derive_seed, make_env, sample_trajectory, stream
from .errors import ConfigError, EmptyGrid
from .learners import Algorithm, Learner, LearnerConfig
from .mrp import exact_source_map, exact_value, lambda_source_map, partial_source_map
from .schedules import parse_schedules

log = logging.getLogger(__name__)

LAMBDA_GRID = tuple(round(0.1 * k, 1) for k in range(11))
WORKERS_ENV = "SOURCE_TRACES_WORKERS"


@dataclass
class LearnerSpec:
    """A named learner and the grid of settings it is run at."""

    id: str
    grid: list[LearnerConfig]
    line: str = ""

    def __post_init__(self):
        if not self.grid:
            raise ConfigError(f"learner {self.id!r} has an empty grid")


@dataclass
class ExperimentConfig:
    name: str
    env: EnvSpec
    learners: list[LearnerSpec]
    batch: int = 30
    horizon: int = 100_000
    checkpoint_every: int = 1000
    seed: int = 0
    targets: tuple[float, ...] = ()
    reward_noise: float = 0.0

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")
        ids = [spec.id for spec in self.learners]
        if len(set(ids)) != len(ids):
            raise ConfigError("learner ids must be unique")

    def checkpoints(self) -> np.ndarray:
        pts = list(range(0, self.horizon + 1, self.checkpoint_every))
        if pts[-1] != self.horizon:
            pts.append(self.horizon)
        return np.array(pts, dtype=np.int64)

    def env_spec(self, index: int) -> EnvSpec:
        from dataclasses import replace

        return replace(self.env, seed=derive_seed(self.seed, "env", index))

    def to_text(self) -> str:
        e = self.env
        lines = [f"name = {self.name}", f"env = {e.kind}", f"gamma = {e.gamma!r}"]
        if e.kind == GRIDWORLD_3D:
            lines += [f"dims = {','.join(str(d) for d in e.dims)}", f"reward_states = {e.num_reward_states}"]
        else:
            lines += [f"num_states = {e.num_states}", f"out_degree = {e.out_degree}"]
            if not e.require_invertible_p:
                lines.append("invertible_p = no")
        lines += [
            f"batch = {self.batch}",
            f"seed = {self.seed}",
            f"horizon = {self.horizon}",
            f"checkpoint_every = {self.checkpoint_every}",
        ]
        if self.targets:
            lines.append(f"targets = {','.join(repr(float(t)) for t in self.targets)}")
        if self.reward_noise:
            lines.append(f"reward_noise = {self.reward_noise!r}")
        for spec in self.learners:
            lines.append(f"learner = {spec.line or spec.id}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


# -- config parsing ---------------------------------------------------------------

_YES = {"yes", "true", "1", "on"}
_NO = {"no", "false", "0", "off"}


def _flag(key, value):
    v = value.lower()
    if v in _YES:
        return True
    if v in _NO:
        return False
    raise ConfigError(f"{key} expects yes/no, got {value!r}")


def parse_learner(line: str) -> LearnerSpec:
    toks = line.split()
    if len(toks) < 2:
        raise ConfigError(f"learner line needs '<id> <algorithm>': {line!r}")
    lid, algo = toks[0], toks[1]
    try:
        algorithm = Algorithm(algo)
    except ValueError as exc:
        choices = ", ".join(a.value for a in Algorithm)
        raise ConfigError(f"unknown algorithm {algo!r} (choose from {choices})") from exc
    opts = {}
    for tok in toks[2:]:
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r} in learner {lid!r}")
        k, v = tok.split("=", 1)
        opts[k] = v
    alphas = parse_schedules(opts.pop("alpha", "fixed:0.1"))
    betas = parse_schedules(opts.pop("beta", "harmonic:1:0.01"))
    lam_text = opts.pop("lambda", "1")
    try:
        lams = list(LAMBDA_GRID) if lam_text == "grid" else [float(x) for x in lam_text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad lambda list {lam_text!r}") from exc
    common = {}
    casts = {
        "lambda_final": ("lam_final", float),
        "lambda_steps": ("lam_steps", int),
        "map": ("source", str),
        "model": ("model", str),
        "replay": ("replay", int),
        "replay_model": ("replay_learns_model", None),
        "is_cap": ("is_cap", float),
        "row_first": ("row_first", None),
        "reward_rate": ("reward_rate", float),
        "m": ("ilstd_m", int),
        "s_error": ("track_s_error", None),
    }
    for key, value in opts.items():
        if key not in casts:
            raise ConfigError(f"unknown learner option {key!r} in learner {lid!r}")
        name, cast = casts[key]
        try:
            common[name] = _flag(key, value) if cast is None else cast(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if algorithm == Algorithm.SOURCE and "source" not in common:
        raise ConfigError(f"learner {lid!r}: source learning needs map=exact|partial:N:LAM|lambda:LAM")
    grid = [
        LearnerConfig(algorithm, alpha=a, beta=b, lam=lam, **common)
        for a, b, lam in itertools.product(alphas, betas, lams)
    ]
    return LearnerSpec(lid, grid, line=line.strip())


def parse_config(text: str) -> ExperimentConfig:
    kv: dict[str, str] = {}
    learners = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "learner":
            learners.append(parse_learner(value))
        elif key in kv:
            raise ConfigError(f"duplicate key {key!r}")
        else:
            kv[key] = value
    known = {"name", "env", "gamma", "dims", "reward_states", "num_states", "out_degree", "invertible_p",
             "batch", "seed", "horizon", "checkpoint_every", "targets", "reward_noise"}
    unknown = set(kv) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if not learners:
        raise ConfigError("config defines no learners")
    try:
        kind = kv.get("env", GRIDWORLD_3D)
        gamma = float(kv.get("gamma", "0.95"))
        if kind == GRIDWORLD_3D:
            dims = tuple(int(d) for d in kv.get("dims", "10,10,10").split(","))
            env = EnvSpec(kind, gamma, dims=dims, num_reward_states=int(kv.get("reward_states", "50")))
        elif kind == RANDOM_MRP:
            env = EnvSpec(kind, gamma, num_states=int(kv.get("num_states", "100")),
                          out_degree=int(kv.get("out_degree", "5")),
                          require_invertible_p=_flag("invertible_p", kv.get("invertible_p", "yes")))
        else:
            raise ConfigError(f"unknown env kind {kind!r}")
        targets = tuple(float(t) for t in kv["targets"].split(",")) if "targets" in kv else ()
        return ExperimentConfig(
            name=kv.get("name", "experiment"),
            env=env,
            learners=learners,
            batch=int(kv.get("batch", "30")),
            horizon=int(float(kv.get("horizon", "100000"))),
            checkpoint_every=int(float(kv.get("checkpoint_every", "1000"))),
            seed=int(kv.get("seed", "0")),
            targets=targets,
            reward_noise=float(kv.get("reward_noise", "0")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- running ---------------------------------------------------------------------


@dataclass(eq=False)
class RunRecord:
    """Error curve of one learner setting on one environment."""

    learner_id: str
    config_id: str
    env_index: int
    steps: np.ndarray
    value_error: np.ndarray
    s_error: np.ndarray | None
    diverged: bool
    divergence_step: int | None
    wall_time: float
    fingerprint: str

    @property
    def final_error(self) -> float:
        return float(self.value_error[-1])


@dataclass(eq=False)
class BatchCurve:
    """Batch-mean error curve of one learner setting."""

    learner_id: str
    config_id: str
    steps: np.ndarray
    value_error: np.ndarray
    s_error: np.ndarray | None
    diverged: bool
    num_envs: int
    order: int = 0

    @property
    def final_error(self) -> float:
        return float(self.value_error[-1])

    @property
    def final_s_error(self) -> float:
        return float(self.s_error[-1]) if self.s_error is not None else float("nan")

    def area_under_curve(self) -> float:
        return float(np.trapezoid(self.value_error, self.steps)) if len(self.steps) > 1 else float(self.value_error[0])

    def at(self, step: int, which: str = "value") -> float:
        """Error at the last checkpoint not after ``step``."""
        idx = int(np.searchsorted(self.steps, step, side="right")) - 1
        arr = self.value_error if which == "value" else self.s_error
        return float(arr[max(idx, 0)])


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]
    initial_errors: np.ndarray  # ||v*||_2 per environment
    wall_time: float = 0.0
    curves: list[BatchCurve] = field(default_factory=list)

    def __post_init__(self):
        if not self.curves:
            self.curves = aggregate(self.records, self.config)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def best(self, selector: str = "final_error") -> dict[str, BatchCurve]:
        return best_of_grid(self.curves, selector)


def resolve_source_map(text: str, mrp, cache: dict):
    """``exact``, ``partial:N:LAM`` or ``lambda:LAM`` for one environment."""
    if text in cache:
        return cache[text]
    parts = text.split(":")
    try:
        if parts[0] == "exact" and len(parts) == 1:
            sm = cache.get("exact") or exact_source_map(mrp)
        elif parts[0] == "partial" and len(parts) in (2, 3):
            sm = partial_source_map(mrp, int(parts[1]), float(parts[2]) if len(parts) == 3 else 1.0)
        elif parts[0] == "lambda" and len(parts) == 2:
            sm = lambda_source_map(mrp, float(parts[1]))
        else:
            raise ValueError
    except ValueError as exc:
        raise ConfigError(f"bad source map {text!r}; expected exact, partial:N:LAM or lambda:LAM") from exc
    cache[text] = sm
    return sm


def _run_env(config: ExperimentConfig, env_index: int, fingerprint: str):
    spec = config.env_spec(env_index)
    mrp = make_env(spec)
    v_star = exact_value(mrp)
    maps: dict = {}
    needs_exact = any(c.track_s_error for s in config.learners for c in s.grid)
    s_star = resolve_source_map("exact", mrp, maps) if needs_exact else None
    traj = sample_trajectory(
        mrp, config.horizon, stream(config.seed, "trajectory", env_index),
        reward_noise=config.reward_noise,
        noise_rng=stream(config.seed, "noise", env_index) if config.reward_noise else None,
    )
    checkpoints = config.checkpoints()
    out = []
    for li, spec_l in enumerate(config.learners):
        for gi, lc in enumerate(spec_l.grid):
            t0 = time.perf_counter()
            sm = resolve_source_map(lc.source, mrp, maps) if lc.needs_fixed_map else None
            learner = Learner(lc, mrp.num_states, mrp.gamma, source_map=sm,
                              rng=stream(config.seed, "ilstd", env_index, li))
            # replay draws are shared by every learner on this environment
            replay_rng = stream(config.seed, "replay", env_index) if lc.replay else None
            verr, serr, div = learner.run(traj, checkpoints, v_star, s_star, replay_rng=replay_rng)
            out.append(RunRecord(
                learner_id=spec_l.id, config_id=lc.label(), env_index=env_index,
                steps=checkpoints.copy(), value_error=verr, s_error=serr,
                diverged=div is not None, divergence_step=div,
                wall_time=time.perf_counter() - t0, fingerprint=fingerprint,
            ))
    return float(np.linalg.norm(v_star)), out


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", WORKERS_ENV, env)
    return 1


def run_experiment(config: ExperimentConfig, workers: int | None = None, on_env_done=None) -> ExperimentResult:
    """Run every learner setting on every environment of the batch.

    Results are ordered by (environment, learner, grid point) regardless of
    worker count; the compiled kernels release the GIL, so threads scale.
    ``on_env_done(env_index, records)`` is called as environments finish, in
    index order.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    fingerprint = config.fingerprint()
    t0 = time.perf_counter()
    parts = []
    if workers == 1:
        for i in range(config.batch):
            parts.append(_run_env(config, i, fingerprint))
            if on_env_done is not None:
                on_env_done(i, parts[-1][1])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_env, config, i, fingerprint) for i in range(config.batch)]
            try:
                for i, fut in enumerate(futures):
                    parts.append(fut.result())
                    if on_env_done is not None:
                        on_env_done(i, parts[-1][1])
            except BaseException:
                for fut in futures:
                    fut.cancel()
                raise
    records = [rec for _, recs in parts for rec in recs]
    initial = np.array([p[0] for p in parts])
    return ExperimentResult(config, records, initial, wall_time=time.perf_counter() - t0)


# -- aggregation -----------------------------------------------------------------


def aggregate(records, config: ExperimentConfig | None = None) -> list[BatchCurve]:
    """Batch means per (learner, setting), in first-seen order."""
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.learner_id, rec.config_id), []).append(rec)
    curves = []
    for order, ((lid, cid), recs) in enumerate(groups.items()):
        steps = recs[0].steps
        verr = np.mean([r.value_error for r in recs], axis=0)
        serr = None
        if recs[0].s_error is not None:
            serr = np.mean([r.s_error for r in recs], axis=0)
        curves.append(BatchCurve(lid, cid, steps, verr, serr, any(r.diverged for r in recs), len(recs), order))
    return curves


SELECTORS = ("final_error", "area_under_curve", "final_s_error")


def _score(curve: BatchCurve, selector: str) -> float:
    if selector == "final_error":
        return curve.final_error
    if selector == "area_under_curve":
        return curve.area_under_curve()
    if selector == "final_s_error":
        return curve.final_s_error
    raise ValueError(f"unknown selector {selector!r}; choose from {SELECTORS}")


def best_of_grid(curves, selector: str = "final_error") -> dict[str, BatchCurve]:
    """Best non-divergent setting per learner; ties go to the earlier setting."""
    if curves and isinstance(next(iter(curves)), RunRecord):
        curves = aggregate(curves)
    if not curves:
        raise EmptyGrid("no runs to select from")
    best: dict[str, tuple[float, BatchCurve]] = {}
    seen = []
    for c in curves:
        if c.learner_id not in seen:
            seen.append(c.learner_id)
        if c.diverged:
            continue
        score = _score(c, selector)
        if not np.isfinite(score):
            continue
        if c.learner_id not in best or score < best[c.learner_id][0]:
            best[c.learner_id] = (score, c)
    missing = [lid for lid in seen if lid not in best]
    if missing:
        raise EmptyGrid(f"every setting diverged for: {', '.join(missing)}")
    return {lid: best[lid][1] for lid in seen}


def first_below(curve: BatchCurve, target: float) -> int | None:
    hit = np.flatnonzero(curve.value_error < target)
    return int(curve.steps[hit[0]]) if hit.size else None


def steps_to_target(curves, targets) -> dict[str, list[int | None]]:
    """First checkpoint at which the batch-mean error is below each target,
    minimized over each learner's settings (None: not reached)."""
    if curves and isinstance(next(iter(curves)), RunRecord):
        curves = aggregate(curves)
    if isinstance(curves, dict):
        curves = list(curves.values())
    table: dict[str, list[int | None]] = {}
    for c in curves:
        row = table.setdefault(c.learner_id, [None] * len(targets))
        for k, target in enumerate(targets):
            s = first_below(c, target)
            if s is not None and (row[k] is None or s < row[k]):
                row[k] = s
    return table


# -- output ----------------------------------------------------------------------


def _f(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else fmt(x)


def records_csv(records) -> str:
    lines = ["learner_id,config_id,env_index,step,value_error,s_error,diverged"]
    for r in records:
        for k, step in enumerate(r.steps):
            s = r.s_error[k] if r.s_error is not None else None
            lines.append(f"{r.learner_id},{r.config_id},{r.env_index},{int(step)},"
                         f"{_f(r.value_error[k])},{_f(s)},{int(r.diverged)}")
    return "\n".join(lines) + "\n"


def curves_csv(curves) -> str:
    lines = ["learner_id,config_id,step,value_error,s_error,diverged,num_envs"]
    for c in curves:
        for k, step in enumerate(c.steps):
            s = c.s_error[k] if c.s_error is not None else None
            lines.append(f"{c.learner_id},{c.config_id},{int(step)},{_f(c.value_error[k])},"
                         f"{_f(s)},{int(c.diverged)},{c.num_envs}")
    return "\n".join(lines) + "\n"


def steps_table_csv(table: dict, targets) -> str:
    lines = ["learner_id," + ",".join(f"target_{fmt(t)}" for t in targets)]
    for lid, row in table.items():
        lines.append(lid + "," + ",".join("not_reached" if s is None else str(s) for s in row))
    return "\n".join(lines) + "\n"


def write_result(result: ExperimentResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    name = result.config.name
    paths = {
        "config": atomic_write_text(out / f"{name}.cfg", result.config.to_text()),
        "records": atomic_write_text(out / f"{name}_runs.csv", records_csv(result.records)),
        "aggregate": atomic_write_text(out / f"{name}_aggregate.csv", curves_csv(result.curves)),
    }
    if result.config.targets:
        table = steps_to_target(result.curves, result.config.targets)
        paths["targets"] = atomic_write_text(out / f"{name}_steps_to_target.csv",
                                             steps_table_csv(table, result.config.targets))
    return paths
