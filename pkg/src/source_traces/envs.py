"""Seeded benchmark environments and trajectory sampling.

Random numbers come from numpy's PCG64 driven by :class:`numpy.random.SeedSequence`.
Independent streams are split off a seed by a fixed stream id:

==========  ==  =========================================
stream      id  consumer
==========  ==  =========================================
env          0  environment generation (transitions, rewards)
trajectory   1  initial state and next-state draws
replay       2  experience-replay sample indices
noise        3  optional per-step reward noise
ilstd        4  dimension choice of randomized iLSTD
==========  ==  =========================================

``stream(seed, name, *keys)`` seeds ``SeedSequence([seed, id, *keys])``, so the
streams of one seed never overlap and extra keys (e.g. an environment index)
split them further.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .errors import ConfigError, GenerationFailure
from .mrp import Mrp

STREAMS = {"env": 0, "trajectory": 1, "replay": 2, "noise": 3, "ilstd": 4}

RANDOM_MRP = "random_mrp"
GRIDWORLD_3D = "gridworld3d"


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for stream ``name`` of ``seed``."""
    entropy = [int(seed), STREAMS[name], *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, name: str, *keys: int) -> int:
    """A 64-bit child seed, e.g. the seed of environment ``i`` in a batch."""
    entropy = [int(seed), STREAMS[name], *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class EnvSpec:
    """Description of one benchmark environment.

    ``kind`` is ``"random_mrp"`` (uses ``num_states`` and ``out_degree``) or
    ``"gridworld3d"`` (uses ``dims`` and ``num_reward_states``).
    """

    kind: str
    gamma: float
    seed: int = 0
    num_states: int = 100
    out_degree: int = 5
    dims: tuple[int, int, int] = (10, 10, 10)
    num_reward_states: int = 50
    # re-sample transitions until P itself is invertible (random MRPs only)
    require_invertible_p: bool = True

    def __post_init__(self):
        if self.kind == RANDOM_MRP:
            if self.num_states < 1:
                raise ConfigError("num_states must be positive")
            if not 1 <= self.out_degree <= self.num_states:
                raise ConfigError(f"out_degree must lie in [1, {self.num_states}], got {self.out_degree}")
        elif self.kind == GRIDWORLD_3D:
            dims = tuple(int(d) for d in self.dims)
            if len(dims) != 3 or min(dims) < 2:
                raise ConfigError(f"gridworld dims must be three integers >= 2, got {self.dims}")
            object.__setattr__(self, "dims", dims)
            if not 0 <= self.num_reward_states <= int(np.prod(dims)):
                raise ConfigError("num_reward_states exceeds the number of states")
        else:
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def size(self) -> int:
        if self.kind == GRIDWORLD_3D:
            return int(np.prod(self.dims))
        return self.num_states


def make_env(spec: EnvSpec) -> Mrp:
    if spec.kind == RANDOM_MRP:
        return gen_random_mrp(spec)
    return gen_gridworld_3d(spec)


def gen_random_mrp(spec: EnvSpec, max_attempts: int = 100) -> Mrp:
    """Random MRP: ``out_degree`` distinct successors per state (self-loops allowed),
    U(0,1) weights normalized per row, N(0,1) expected reward per state.

    Transitions are re-drawn while ``I - gamma P`` (and, by default, ``P``)
    is singular.
    """
    if spec.kind != RANDOM_MRP:
        raise ConfigError(f"expected a {RANDOM_MRP} spec, got {spec.kind!r}")
    n, k = spec.num_states, spec.out_degree
    rng = stream(spec.seed, "env")
    reward = rng.standard_normal(n)
    eye = np.eye(n)
    for _ in range(max_attempts):
        P = np.zeros((n, n))
        for s in range(n):
            succ = rng.choice(n, size=k, replace=False)
            w = 1.0 - rng.random(k)  # (0, 1]; keeps every successor strictly positive
            P[s, succ] = w / w.sum()
        if spec.require_invertible_p and np.linalg.matrix_rank(P) < n:
            continue
        if np.linalg.matrix_rank(eye - spec.gamma * P) < n:
            continue
        return Mrp(P, reward, spec.gamma)
    raise GenerationFailure(f"no invertible transition matrix after {max_attempts} attempts")


def grid_index(x: int, y: int, z: int, dims) -> int:
    X, Y, _ = dims
    return x + X * y + X * Y * z


def grid_neighbors(index: int, dims) -> list[int]:
    """The six toroidal neighbours (duplicates kept when a dimension is 2)."""
    X, Y, Z = dims
    x, y, z = index % X, (index // X) % Y, index // (X * Y)
    return [
        grid_index((x + 1) % X, y, z, dims),
        grid_index((x - 1) % X, y, z, dims),
        grid_index(x, (y + 1) % Y, z, dims),
        grid_index(x, (y - 1) % Y, z, dims),
        grid_index(x, y, (z + 1) % Z, dims),
        grid_index(x, y, (z - 1) % Z, dims),
    ]


def gen_gridworld_3d(spec: EnvSpec) -> Mrp:
    """3D torus gridworld with U(0,1)-weighted moves to the 6 neighbours and
    ``num_reward_states`` distinct states carrying N(0,1) rewards."""
    if spec.kind != GRIDWORLD_3D:
        raise ConfigError(f"expected a {GRIDWORLD_3D} spec, got {spec.kind!r}")
    dims = spec.dims
    n = spec.size
    rng = stream(spec.seed, "env")
    w = 1.0 - rng.random((n, 6))
    w /= w.sum(axis=1, keepdims=True)
    cols = np.array([grid_neighbors(i, dims) for i in range(n)])
    rows = np.repeat(np.arange(n), 6).reshape(n, 6)
    P = np.zeros((n, n))
    np.add.at(P, (rows, cols), w)  # merges duplicate neighbours on size-2 axes
    reward = np.zeros(n)
    chosen = rng.choice(n, size=spec.num_reward_states, replace=False)
    reward[chosen] = rng.standard_normal(spec.num_reward_states)
    return Mrp(P, reward, spec.gamma)


class Transition(NamedTuple):
    state: int
    reward: float
    next_state: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A single continuing run: ``states[t] -> states[t+1]`` earning ``rewards[t]``."""

    states: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.rewards.shape[0] + 1:
            raise ValueError("a trajectory needs exactly one more state than rewards")

    def __len__(self):
        return self.rewards.shape[0]

    def __getitem__(self, t) -> Transition:
        return Transition(int(self.states[t]), float(self.rewards[t]), int(self.states[t + 1]))

    def __iter__(self):
        for t in range(len(self)):
            yield self[t]

    @property
    def steps(self) -> list[Transition]:
        return list(self)


class Sampler:
    """Cached per-row CDFs of an MRP for next-state draws."""

    def __init__(self, mrp: Mrp):
        self.mrp = mrp
        P = mrp.transition
        self.cdf = np.cumsum(P, axis=1)
        # rows may sum to 1 - 1e-16; never step past the last reachable state
        self.last = np.array([np.flatnonzero(row)[-1] for row in P], dtype=np.int64)

    def next_state(self, state: int, u: float) -> int:
        j = int(np.searchsorted(self.cdf[state], u, side="right"))
        return min(j, int(self.last[state]))


_sampler_cache: dict[int, Sampler] = {}


def _sampler(mrp: Mrp) -> Sampler:
    s = _sampler_cache.get(id(mrp))
    if s is None or s.mrp is not mrp:
        if len(_sampler_cache) > 64:
            _sampler_cache.clear()
        s = _sampler_cache[id(mrp)] = Sampler(mrp)
    return s


def sample_step(mrp: Mrp, state: int, rng: np.random.Generator) -> tuple[float, int]:
    """Draw one transition from ``state``: returns ``(expected reward, next state)``.

    Consumes exactly one ``rng.random()`` draw.
    """
    if not 0 <= state < mrp.num_states:
        raise IndexError(f"state {state} out of range")
    return float(mrp.reward[state]), _sampler(mrp).next_state(state, rng.random())


@numba.njit(cache=True, nogil=True)
def _walk(cdf, last, start, u):
    horizon = u.shape[0]
    out = np.empty(horizon + 1, dtype=np.int64)
    s = start
    out[0] = s
    for t in range(horizon):
        j = np.searchsorted(cdf[s], u[t], side="right")
        if j > last[s]:
            j = last[s]
        s = j
        out[t + 1] = s
    return out


def sample_trajectory(
    mrp: Mrp,
    horizon: int,
    rng: np.random.Generator,
    start: int | None = None,
    reward_noise: float = 0.0,
    noise_rng: np.random.Generator | None = None,
) -> Trajectory:
    """Sample ``horizon`` steps of a continuing run.

    The start state is uniform unless given.  Next-state draws use the same
    ``rng.random()`` sequence as repeated :func:`sample_step` calls.  With
    ``reward_noise > 0`` each reward gets additive N(0, reward_noise^2)
    noise drawn from ``noise_rng``.
    """
    sampler = _sampler(mrp)
    if start is None:
        start = int(rng.integers(mrp.num_states))
    u = rng.random(int(horizon))
    states = _walk(sampler.cdf, sampler.last, int(start), u)
    rewards = mrp.reward[states[:-1]]
    if reward_noise > 0.0:
        if noise_rng is None:
            raise ValueError("reward noise requires a noise generator")
        rewards = rewards + reward_noise * noise_rng.standard_normal(int(horizon))
    return Trajectory(states, np.ascontiguousarray(rewards, dtype=np.float64))
