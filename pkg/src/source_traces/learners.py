r"""Incremental tabular value learners.

Each algorithm pairs a *value rule* (how ``v`` is updated or read) with a
*model rule* (how the source map ``S0`` is learned, if at all):

=======================  ============================================  ===============
algorithm                value rule                                    default S0 model
=======================  ============================================  ===============
``td0``                  ``v[i] += a d``                               none
``td_lambda``            accumulating trace ``e``, ``v += a d e``      none
``source``               ``v += a d S0[:, i]``                         fixed (given)
``td_source``            same                                          columns
``td_sr``                same                                          rows
``td_source_sr``         same                                          columns + rows
``white``                pseudo-reward ``theta[i] += a d``, v=S0 theta  columns + rows
``prd``                  ``theta += a d S0[i, :]``, v=S0 theta          columns + rows
``decomposition``        reward model ``r0`` (running mean), v=S0 r0    columns + rows
``triple``               expected TD error from ``r0``, ``P0``, ``S0``  columns + rows
``ilstd_random``         iLSTD, random coordinate                      none
``ilstd_greedy``         iLSTD, largest-residual coordinate            none
=======================  ============================================  ===============

``d`` is the TD error ``r + gamma v[j] - v[i]`` of the transition ``i -> j``.
The column model is the importance-sampled recurrence

    e = I[:, j] + gamma lam (c[j] / c[i]) S0[:, i];   S0[:, j] <- (1-b) S0[:, j] + b e

and the row model is ``S0[i, :] <- (1-b) S0[i, :] + b (I[i, :] + gamma lam S0[j, :])``.
Within a step the value update comes first, then the count of ``j`` is bumped,
then the model is updated (columns before rows unless ``row_first``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import _kernels as K
from .envs import Trajectory, Transition
from .errors import ConfigError, DimensionMismatch, Divergence, InvalidStep
from .mrp import SourceMap
from .schedules import Schedule, fixed, harmonic


class Algorithm(str, Enum):
    TD0 = "td0"
    TD_LAMBDA = "td_lambda"
    SOURCE = "source"
    TD_SOURCE = "td_source"
    TD_SR = "td_sr"
    TD_SOURCE_SR = "td_source_sr"
    WHITE = "white"
    PSEUDO_REWARD_DESCENT = "prd"
    SR_REWARD_DECOMPOSITION = "decomposition"
    TRIPLE_MODEL = "triple"
    ILSTD_RANDOM = "ilstd_random"
    ILSTD_GREEDY = "ilstd_greedy"

    def __str__(self):
        return self.value


_RULES = {
    Algorithm.TD0: (K.V_TD0, K.M_NONE),
    Algorithm.TD_LAMBDA: (K.V_TD_LAMBDA, K.M_NONE),
    Algorithm.SOURCE: (K.V_SOURCE, K.M_FIXED),
    Algorithm.TD_SOURCE: (K.V_SOURCE, K.M_SOURCE),
    Algorithm.TD_SR: (K.V_SOURCE, K.M_SR),
    Algorithm.TD_SOURCE_SR: (K.V_SOURCE, K.M_SOURCE_SR),
    Algorithm.WHITE: (K.V_WHITE, K.M_SOURCE_SR),
    Algorithm.PSEUDO_REWARD_DESCENT: (K.V_PRD, K.M_SOURCE_SR),
    Algorithm.SR_REWARD_DECOMPOSITION: (K.V_DECOMP, K.M_SOURCE_SR),
    Algorithm.TRIPLE_MODEL: (K.V_TRIPLE, K.M_SOURCE_SR),
    Algorithm.ILSTD_RANDOM: (K.V_ILSTD_RANDOM, K.M_NONE),
    Algorithm.ILSTD_GREEDY: (K.V_ILSTD_GREEDY, K.M_NONE),
}

MODELS = {
    "fixed": K.M_FIXED,
    "source": K.M_SOURCE,
    "sr": K.M_SR,
    "source_sr": K.M_SOURCE_SR,
    "transition": K.M_TRANSITION,
}

# algorithms whose S0 model can be swapped through LearnerConfig.model
_MODEL_SWAPPABLE = {
    Algorithm.WHITE,
    Algorithm.PSEUDO_REWARD_DESCENT,
    Algorithm.SR_REWARD_DECOMPOSITION,
    Algorithm.TRIPLE_MODEL,
}

SOURCE_FAMILY = frozenset(
    {Algorithm.SOURCE, Algorithm.TD_SOURCE, Algorithm.TD_SR, Algorithm.TD_SOURCE_SR}
    | _MODEL_SWAPPABLE
)
USES_ELIGIBILITY = frozenset({Algorithm.TD_LAMBDA})

_EMPTY1 = np.zeros(0)
_EMPTY_COUNTS = np.zeros(0, dtype=np.int64)


def _empty2(order="F"):
    return np.zeros((0, 0), order=order)


@dataclass
class LearnerConfig:
    """One learner and its step-size bindings.

    ``source`` names the fixed map for ``algorithm="source"`` (or for
    ``model="fixed"``): ``"exact"``, ``"partial:N:LAM"`` or ``"lambda:LAM"``;
    the runner resolves it against each environment.  ``lam_final`` and
    ``lam_steps`` anneal lambda linearly from ``lam`` over the first
    ``lam_steps`` steps.  ``is_cap`` clips the importance ratio (off by default).
    ``reward_rate`` > 0 swaps the running-mean reward model for a constant-rate one.
    """

    algorithm: Algorithm
    alpha: Schedule = field(default_factory=lambda: fixed(0.1))
    beta: Schedule = field(default_factory=lambda: harmonic(1.0, 0.01))
    lam: float = 1.0
    lam_final: float | None = None
    lam_steps: int = 0
    model: str | None = None
    source: str | None = None
    is_cap: float = float("inf")
    row_first: bool = False
    reward_rate: float = 0.0
    ilstd_m: int = 1
    replay: int = 0
    replay_learns_model: bool = True
    track_s_error: bool = False

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lam_final is not None and not 0.0 <= self.lam_final <= 1.0:
            raise ConfigError(f"final lambda must lie in [0, 1], got {self.lam_final}")
        if self.model is not None:
            if self.model not in MODELS:
                raise ConfigError(f"unknown model rule {self.model!r}")
            if self.algorithm not in _MODEL_SWAPPABLE:
                raise ConfigError(f"{self.algorithm} has a fixed model rule")
            if self.model == "transition" and self.algorithm != Algorithm.TRIPLE_MODEL:
                raise ConfigError("the transition-model S0 rule needs the triple model's P0")
        if self.needs_fixed_map and self.source is None:
            raise ConfigError(f"{self.algorithm} with a fixed model needs source=exact|partial:N:LAM|lambda:LAM")
        if self.replay < 0:
            raise ConfigError("replay count must be non-negative")
        if self.replay > 0 and self.algorithm in USES_ELIGIBILITY:
            # eligibility traces need trajectories; replayed transitions are isolated
            raise ConfigError("experience replay cannot drive an eligibility-trace learner")
        if self.ilstd_m < 1:
            raise ConfigError("iLSTD needs at least one coordinate update per step")

    @property
    def rules(self) -> tuple[int, int]:
        vrule, mrule = _RULES[self.algorithm]
        if self.model is not None:
            mrule = MODELS[self.model]
        return vrule, mrule

    @property
    def needs_fixed_map(self) -> bool:
        return self.rules[1] == K.M_FIXED

    @property
    def learns_source_map(self) -> bool:
        return self.rules[1] >= K.M_SOURCE

    @property
    def is_ilstd(self) -> bool:
        return self.algorithm in (Algorithm.ILSTD_RANDOM, Algorithm.ILSTD_GREEDY)

    def label(self) -> str:
        """Compact identifier of the grid point (no commas)."""
        parts = []
        if self.algorithm != Algorithm.SR_REWARD_DECOMPOSITION:
            parts.append(f"alpha={self.alpha}")
        if self.learns_source_map:
            parts.append(f"beta={self.beta}")
        if self.algorithm == Algorithm.TD_LAMBDA or self.learns_source_map:
            lam = f"lambda={self.lam:g}"
            if self.lam_final is not None and self.lam_steps > 0:
                lam += f"->{self.lam_final:g}@{self.lam_steps}"
            parts.append(lam)
        if self.source is not None and self.needs_fixed_map:
            parts.append(f"map={self.source}")
        if self.model is not None:
            parts.append(f"model={self.model}")
        if self.replay:
            parts.append(f"replay={self.replay}")
        return ";".join(parts)

    def with_(self, **changes) -> "LearnerConfig":
        return replace(self, **changes)


@dataclass(eq=False)
class LearnerState:
    """Mutable arrays of one learner.  Unused arrays are empty.

    ``s0`` is Fortran-ordered so that source traces (columns) are contiguous.
    ``counts`` are visit counts: the initial state plus every arrival.
    """

    algorithm: Algorithm
    v: np.ndarray
    s0: np.ndarray
    counts: np.ndarray
    elig: np.ndarray
    theta: np.ndarray
    r0: np.ndarray
    reward_counts: np.ndarray
    p_counts: np.ndarray
    p_totals: np.ndarray
    A: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    step_count: int = 0
    started: bool = False

    @classmethod
    def new(cls, algorithm, num_states: int, source_map=None, model: str | None = None) -> "LearnerState":
        algorithm = Algorithm(algorithm)
        n = int(num_states)
        vrule, mrule = _RULES[algorithm]
        if model is not None:
            mrule = MODELS[model]
        if mrule == K.M_NONE:
            s0 = _empty2()
        elif source_map is not None:
            m = source_map.matrix if isinstance(source_map, SourceMap) else np.asarray(source_map, dtype=float)
            if m.shape != (n, n):
                raise DimensionMismatch(f"source map has shape {m.shape}, expected ({n}, {n})")
            s0 = np.array(m, dtype=np.float64, order="F", copy=True)
        elif mrule == K.M_FIXED:
            raise ConfigError(f"{algorithm} with a fixed model needs a source map")
        else:
            s0 = np.asfortranarray(np.eye(n))
        white_like = vrule in (K.V_WHITE, K.V_PRD)
        reward_model = vrule in (K.V_DECOMP, K.V_TRIPLE)
        ilstd = vrule in (K.V_ILSTD_RANDOM, K.V_ILSTD_GREEDY)
        return cls(
            algorithm=algorithm,
            v=np.zeros(n),
            s0=s0,
            counts=np.zeros(n, dtype=np.int64),
            elig=np.zeros(n) if vrule == K.V_TD_LAMBDA else _EMPTY1.copy(),
            theta=np.zeros(n) if white_like else _EMPTY1.copy(),
            r0=np.zeros(n) if reward_model else _EMPTY1.copy(),
            reward_counts=np.zeros(n, dtype=np.int64) if reward_model else _EMPTY_COUNTS.copy(),
            p_counts=np.zeros((n, n)) if vrule == K.V_TRIPLE else _empty2("C"),
            p_totals=np.zeros(n) if vrule == K.V_TRIPLE else _EMPTY1.copy(),
            A=np.zeros((n, n), order="F") if ilstd else _empty2(),
            b=np.zeros(n) if ilstd else _EMPTY1.copy(),
            mu=np.zeros(n) if ilstd else _EMPTY1.copy(),
        )

    @property
    def num_states(self) -> int:
        return self.v.shape[0]

    @property
    def p0(self) -> np.ndarray:
        """Normalized empirical transition model (zero rows where unvisited)."""
        tot = self.p_totals[:, None]
        return np.divide(self.p_counts, tot, out=np.zeros_like(self.p_counts), where=tot > 0)

    def arrays(self):
        return (self.v, self.s0, self.counts, self.elig, self.theta, self.r0, self.reward_counts,
                self.p_counts, self.p_totals, self.A, self.b, self.mu)


def value_estimate(state: LearnerState) -> np.ndarray:
    """Current value estimate: ``v`` itself, or ``S0 theta`` / ``S0 r0`` for
    learners that only keep reward-space coordinates."""
    vrule, _ = _RULES[state.algorithm]
    return K.value_estimate(vrule, state.v, state.s0, state.theta, state.r0)


def begin(state: LearnerState, initial_state: int, beta: float = 1.0, model: str | None = None) -> None:
    """Start-of-run bookkeeping: count the initial state and, for column-learning
    models, blend its source trace toward the indicator."""
    _, mrule = _RULES[state.algorithm]
    if model is not None:
        mrule = MODELS[model]
    K.begin(mrule, state.s0, state.counts, int(initial_state), float(beta))
    state.started = True


def _apply(state, t: Transition, vrule, mrule, *, alpha=0.0, beta=0.0, beta_row=None, lam=0.0,
           gamma=0.0, picks=_EMPTY1, td_error=None, learn_model=True, row_first=False,
           reward_rate=0.0, is_cap=float("inf"), count_step=True) -> bool:
    i, r, j = int(t[0]), float(t[1]), int(t[2])
    n = state.num_states
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"transition {i}->{j} out of range for {n} states")
    diverged = K.step(
        vrule, mrule, *state.arrays(), i, r, j, float(alpha), float(beta),
        float(beta if beta_row is None else beta_row), float(lam), float(gamma), float(is_cap),
        bool(row_first), float(reward_rate), np.ascontiguousarray(picks, dtype=np.float64),
        bool(learn_model), td_error is not None, 0.0 if td_error is None else float(td_error),
    )
    if count_step:
        state.step_count += 1
    return diverged


def _require_counted(state, t):
    if state.counts[int(t[0])] < 1:
        raise InvalidStep(f"state {t[0]} has a zero visit count; call begin() with the initial state first")


# -- per-algorithm steps with explicit rates -----------------------------------


def step_td0(state, t, alpha, gamma):
    _apply(state, t, K.V_TD0, K.M_NONE, alpha=alpha, gamma=gamma)


def step_td_lambda(state, t, alpha, lam, gamma):
    """Accumulating-trace TD(lambda): ``e <- gamma lam e + I[:, i]``, then ``v += a d e``."""
    _apply(state, t, K.V_TD_LAMBDA, K.M_NONE, alpha=alpha, lam=lam, gamma=gamma)


def step_source_learning(state, t, alpha, s0, gamma, td_error=None):
    """Rank-one source update ``v += alpha * d * s0[:, i]`` with a fixed map.

    ``td_error`` replaces the sampled TD error, e.g. by the expected TD error
    of an asynchronous model-based backup.
    """
    m = s0.matrix if isinstance(s0, SourceMap) else np.asarray(s0, dtype=float)
    n = state.num_states
    if m.shape != (n, n):
        raise DimensionMismatch(f"source map has shape {m.shape}, expected ({n}, {n})")
    i = int(t[0])
    if td_error is None:
        td_error = float(t[1]) + gamma * state.v[int(t[2])] - state.v[i]
    state.v += (alpha * td_error) * m[:, i]
    state.counts[int(t[2])] += 1
    state.step_count += 1


def step_td_source(state, t, alpha, beta, lam, gamma, is_cap=float("inf")):
    _require_counted(state, t)
    _apply(state, t, K.V_SOURCE, K.M_SOURCE, alpha=alpha, beta=beta, lam=lam, gamma=gamma, is_cap=is_cap)


def step_td_sr(state, t, alpha, beta, lam, gamma):
    _apply(state, t, K.V_SOURCE, K.M_SR, alpha=alpha, beta=beta, lam=lam, gamma=gamma)


def step_td_source_sr(state, t, alpha, beta, lam, gamma, row_first=False, is_cap=float("inf")):
    _require_counted(state, t)
    _apply(state, t, K.V_SOURCE, K.M_SOURCE_SR, alpha=alpha, beta=beta, lam=lam, gamma=gamma,
           row_first=row_first, is_cap=is_cap)


def _model_rule(state, model):
    if model is None:
        return _RULES[state.algorithm][1]
    return MODELS[model]


def step_white(state, t, alpha, gamma, beta=0.0, lam=1.0, model=None):
    """White's algorithm: only the pseudo-reward of ``i`` moves, ``theta[i] += a d``.

    With the default ``beta=0`` the source model is held fixed.
    """
    mrule = _model_rule(state, model)
    if mrule in (K.M_SOURCE, K.M_SOURCE_SR):
        _require_counted(state, t)
    _apply(state, t, K.V_WHITE, mrule, alpha=alpha, beta=beta, lam=lam, gamma=gamma)


def step_pseudo_reward_descent(state, t, alpha, gamma, beta=0.0, lam=1.0, model=None):
    """Semi-gradient TD on ``theta`` with the SR row of ``i`` as features."""
    mrule = _model_rule(state, model)
    if mrule in (K.M_SOURCE, K.M_SOURCE_SR):
        _require_counted(state, t)
    _apply(state, t, K.V_PRD, mrule, alpha=alpha, beta=beta, lam=lam, gamma=gamma)


def step_sr_reward_decomposition(state, t, beta, beta_r, lam, gamma, model=None):
    """Learn ``S0`` and ``r0`` independently.  ``beta_r=0`` gives the exact running mean."""
    mrule = _model_rule(state, model)
    if mrule in (K.M_SOURCE, K.M_SOURCE_SR):
        _require_counted(state, t)
    _apply(state, t, K.V_DECOMP, mrule, beta=beta, lam=lam, gamma=gamma, reward_rate=beta_r)


def step_triple_model(state, t, alpha, beta, gamma, lam=1.0, model=None, beta_r=0.0):
    """Record ``t`` in ``P0``/``r0``, then ``v += a S0[:, i] (r0[i] + gamma P0[i] . v - v[i])``,
    then update ``S0``."""
    mrule = _model_rule(state, model)
    if mrule in (K.M_SOURCE, K.M_SOURCE_SR):
        _require_counted(state, t)
    _apply(state, t, K.V_TRIPLE, mrule, alpha=alpha, beta=beta, lam=lam, gamma=gamma, reward_rate=beta_r)


def step_ilstd(state, t, alpha, gamma, variant="greedy", m=1, rng=None):
    """Tabular iLSTD: add the sample to ``A``, ``b`` and the residual ``mu``,
    then update ``m`` coordinates of ``v`` from ``mu``.

    Raises :class:`Divergence` once a coordinate exceeds ``1e6`` in magnitude.
    """
    if variant == "greedy":
        vrule, picks = K.V_ILSTD_GREEDY, np.zeros(m)
    elif variant == "random":
        if rng is None:
            raise ValueError("the random iLSTD variant needs a generator")
        vrule, picks = K.V_ILSTD_RANDOM, rng.random(m)
    else:
        raise ValueError(f"unknown iLSTD variant {variant!r}")
    if _apply(state, t, vrule, K.M_NONE, alpha=alpha, gamma=gamma, picks=picks):
        raise Divergence(state.step_count, float(np.abs(state.v).max()))


# -- schedule-driven learner -----------------------------------------------------


class Learner:
    """A learner bound to its schedules.

    ``step`` consumes one real transition (advancing the global step ``n``);
    ``step(t, replayed=True)`` applies a replayed transition at the current ``n``.
    ``run`` processes a whole trajectory in compiled code.
    """

    def __init__(self, config: LearnerConfig, num_states: int, gamma: float,
                 source_map=None, rng: np.random.Generator | None = None):
        self.config = config
        self.gamma = float(gamma)
        self.vrule, self.mrule = config.rules
        self.state = LearnerState.new(config.algorithm, num_states, source_map=source_map, model=config.model)
        self.rng = rng  # randomized iLSTD coordinate picks
        self.diverged_at: int | None = None
        if config.algorithm == Algorithm.ILSTD_RANDOM and rng is None:
            raise ConfigError("randomized iLSTD needs a generator")

    @property
    def num_states(self) -> int:
        return self.state.num_states

    @property
    def step_count(self) -> int:
        return self.state.step_count

    def lam_at(self, n: int) -> float:
        c = self.config
        if c.lam_final is None or c.lam_steps <= 0:
            return c.lam
        return c.lam + (c.lam_final - c.lam) * min(1.0, n / c.lam_steps)

    def begin(self, initial_state: int) -> None:
        s = self.state
        beta = self.config.beta(1, 1)
        K.begin(self.mrule, s.s0, s.counts, int(initial_state), float(beta))
        s.started = True

    def step(self, t: Transition, replayed: bool = False) -> None:
        s = self.state
        if not s.started:
            self.begin(int(t[0]))
        learn = self.config.replay_learns_model if replayed else True
        n = max(s.step_count, 1) if replayed else s.step_count + 1
        i, j = int(t[0]), int(t[2])
        ci = int(s.counts[i])
        cj = int(s.counts[j]) + (1 if learn else 0)
        cii = ci + (1 if learn and i == j else 0)
        alpha = self.config.alpha(n, max(ci, 1))
        beta_col = self.config.beta(n, max(cj, 1))
        beta_row = self.config.beta(n, max(cii, 1))
        picks = _EMPTY1
        if self.vrule == K.V_ILSTD_RANDOM:
            picks = self.rng.random(self.config.ilstd_m)
        elif self.vrule == K.V_ILSTD_GREEDY:
            picks = np.zeros(self.config.ilstd_m)
        c = self.config
        diverged = _apply(s, t, self.vrule, self.mrule, alpha=alpha, beta=beta_col, beta_row=beta_row,
                          lam=self.lam_at(n), gamma=self.gamma, picks=picks, learn_model=learn,
                          row_first=c.row_first, reward_rate=c.reward_rate, is_cap=c.is_cap,
                          count_step=not replayed)
        if diverged:
            self.diverged_at = s.step_count
            raise Divergence(s.step_count, float(np.abs(s.v).max()))

    def value_estimate(self) -> np.ndarray:
        return value_estimate(self.state)

    def run(self, trajectory: Trajectory, checkpoints, v_star, s_star=None,
            replay_rng: np.random.Generator | None = None):
        """Consume a trajectory (with ``config.replay`` replays per real step).

        Returns ``(value_errors, s_errors, divergence_step)`` at the given
        checkpoints (step counts relative to the start of this call);
        ``divergence_step`` is None when the run stayed bounded.
        """
        c = self.config
        s = self.state
        horizon = len(trajectory)
        checkpoints = np.asarray(checkpoints, dtype=np.int64)
        if checkpoints.size and (checkpoints.min() < 0 or checkpoints.max() > horizon
                                 or np.any(np.diff(checkpoints) <= 0)):
            raise ValueError("checkpoints must be strictly increasing within [0, horizon]")
        k = c.replay
        if k > 0:
            if replay_rng is None:
                raise ConfigError("replay needs a generator")
            replay_u = replay_rng.random(horizon * k)
        else:
            replay_u = _EMPTY1
        m = c.ilstd_m if c.is_ilstd else 0
        if self.vrule == K.V_ILSTD_RANDOM:
            picks = self.rng.random(horizon * (1 + k) * m)
        else:
            picks = _EMPTY1
        track = bool(c.track_s_error and s_star is not None and s.s0.size)
        if track:
            S_star = np.array(s_star.matrix if isinstance(s_star, SourceMap) else s_star, dtype=np.float64, order="F")
        else:
            S_star = _empty2()
        lam_final = c.lam if c.lam_final is None else c.lam_final
        verr, serr, div = K.run(
            self.vrule, self.mrule, *s.arrays(),
            np.ascontiguousarray(trajectory.states, dtype=np.int64),
            np.ascontiguousarray(trajectory.rewards, dtype=np.float64), s.step_count,
            *c.alpha.params(), *c.beta.params(),
            float(c.lam), float(lam_final), int(c.lam_steps), self.gamma, float(c.is_cap),
            bool(c.row_first), float(c.reward_rate), int(m),
            int(k), replay_u, bool(c.replay_learns_model), picks,
            checkpoints, np.array(v_star, dtype=np.float64), S_star, track,
            not s.started,
        )
        s.started = True
        if div >= 0:
            self.diverged_at = int(div)
            s.step_count = int(div)
        else:
            s.step_count += horizon
        return verr, (serr if track else None), (None if div < 0 else int(div))
