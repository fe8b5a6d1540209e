"""Experience replay for source-trace learners.

Source traces do not depend on the trajectory that produced a transition, so
isolated transitions can be replayed in any order.  Eligibility traces can
not, which is why replay refuses a TD(lambda) learner.
"""

from __future__ import annotations

import numpy as np

from .envs import Transition
from .errors import ConfigError, EmptyMemory
from .learners import USES_ELIGIBILITY, Learner


class ReplayMemory:
    """Append-only, unbounded store of transitions."""

    def __init__(self):
        self._items: list[Transition] = []

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx) -> Transition:
        return self._items[idx]

    def push(self, t) -> None:
        self._items.append(Transition(int(t[0]), float(t[1]), int(t[2])))

    def sample(self, rng: np.random.Generator) -> Transition:
        """Uniform draw with replacement; consumes one ``rng.random()``."""
        if not self._items:
            raise EmptyMemory("cannot sample from an empty replay memory")
        size = len(self._items)
        return self._items[min(int(rng.random() * size), size - 1)]


def replay_step(mem: ReplayMemory, learner: Learner, k: int, rng: np.random.Generator) -> None:
    """Apply ``k`` replayed transitions to ``learner`` (global step unchanged)."""
    if learner.config.algorithm in USES_ELIGIBILITY:
        raise ConfigError("experience replay cannot drive an eligibility-trace learner")
    if k <= 0:
        return
    if not len(mem):
        raise EmptyMemory("cannot replay from an empty memory")
    for _ in range(k):
        learner.step(mem.sample(rng), replayed=True)


def real_step(mem: ReplayMemory, learner: Learner, t, k: int, rng: np.random.Generator) -> None:
    """One real environment step: remember ``t``, learn from it, then replay ``k``."""
    mem.push(t)
    learner.step(t)
    replay_step(mem, learner, k, rng)
