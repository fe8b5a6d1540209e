"""Step-size schedules for the value rate (alpha) and the model rate (beta).

Three families:

* ``fixed:a0`` -- constant ``a0``.
* ``harmonic:a0:floor`` -- per-state harmonic decay ``max(floor, a0 / c(s))``.
* ``annealed:a0:N0[:exponent]`` -- ``a0 (N0 + 1) / (N0 + n**exponent)`` in the
  global step ``n`` (exponent 1.1 by default).  ``annealed-state`` uses the
  visit count ``c(s)`` in place of ``n``.

``parse_schedule`` reads those strings and ``str(schedule)`` writes them back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError, InvalidStep

FIXED, HARMONIC, ANNEALED = 0, 1, 2
_KIND_CODES = {"fixed": FIXED, "harmonic": HARMONIC, "annealed": ANNEALED}

PAPER_ALPHAS = (5e-1, 2e-1, 1e-1, 5e-2, 2e-2, 1e-2, 5e-3)
PAPER_N0 = (0.0, 1e2, 1e4, 1e6)
ANNEAL_EXPONENT = 1.1


def _num(x: float) -> str:
    # shortest text that parses back to the same float
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class Schedule:
    kind: str
    a0: float
    floor: float = 0.0
    n0: float = 0.0
    exponent: float = ANNEAL_EXPONENT
    per_state: bool = False

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not self.a0 > 0:
            raise ConfigError(f"a0 must be positive, got {self.a0}")
        if self.kind == "harmonic" and not 0 <= self.floor <= self.a0:
            raise ConfigError(f"harmonic floor must lie in [0, a0], got {self.floor}")
        if self.n0 < 0:
            raise ConfigError(f"N0 must be non-negative, got {self.n0}")

    def __str__(self):
        if self.kind == "fixed":
            return f"fixed:{_num(self.a0)}"
        if self.kind == "harmonic":
            return f"harmonic:{_num(self.a0)}:{_num(self.floor)}"
        name = "annealed-state" if self.per_state else "annealed"
        text = f"{name}:{_num(self.a0)}:{_num(self.n0)}"
        if self.exponent != ANNEAL_EXPONENT:
            text += f":{_num(self.exponent)}"
        return text

    def params(self) -> tuple[int, float, float, float, bool]:
        """Flat encoding consumed by the compiled kernels."""
        p = self.floor if self.kind == "harmonic" else self.n0
        return _KIND_CODES[self.kind], float(self.a0), float(p), float(self.exponent), bool(self.per_state)

    def __call__(self, global_step: int, visit_count: int = 1) -> float:
        return rate(self, global_step, visit_count)


def fixed(a0: float) -> Schedule:
    return Schedule("fixed", a0)


def harmonic(a0: float, floor: float) -> Schedule:
    return Schedule("harmonic", a0, floor=floor)


def annealed(a0: float, n0: float, exponent: float = ANNEAL_EXPONENT, per_state: bool = False) -> Schedule:
    return Schedule("annealed", a0, n0=n0, exponent=exponent, per_state=per_state)


@numba.njit(cache=True, nogil=True)
def rate_code(kind, a0, p, exponent, per_state, n, c):
    if kind == 0:
        return a0
    if kind == 1:
        r = a0 / c
        return r if r > p else p
    x = c if per_state else n
    return a0 * (p + 1.0) / (p + x**exponent)


def rate(sched: Schedule, global_step: int, visit_count: int = 1) -> float:
    """Step size at 1-based ``global_step`` for a state visited ``visit_count`` times."""
    if global_step < 1:
        raise InvalidStep(f"global step must be >= 1, got {global_step}")
    if visit_count < 1 and (sched.kind == "harmonic" or sched.per_state):
        raise InvalidStep(f"visit count must be >= 1, got {visit_count}")
    return float(rate_code(*sched.params(), float(global_step), float(visit_count)))


def rates(sched: Schedule, steps) -> np.ndarray:
    """Vectorized global-step evaluation (visit count fixed at 1)."""
    n = np.asarray(steps, dtype=float)
    if np.any(n < 1):
        raise InvalidStep("global steps must be >= 1")
    if sched.kind == "fixed":
        return np.full(n.shape, sched.a0)
    if sched.kind == "harmonic":
        return np.full(n.shape, max(sched.floor, sched.a0))
    return sched.a0 * (sched.n0 + 1.0) / (sched.n0 + n**sched.exponent)


def paper_grid() -> list[Schedule]:
    """The 28 annealed schedules: a0 x N0."""
    return [annealed(a, n0) for a in PAPER_ALPHAS for n0 in PAPER_N0]


def fixed_grid() -> list[Schedule]:
    return [fixed(a) for a in PAPER_ALPHAS]


def harmonic_grid(a0: float = 1.0) -> list[Schedule]:
    """Per-state harmonic decay floored at each fixed-grid rate."""
    return [harmonic(a0, a) for a in PAPER_ALPHAS]


PRESETS = {
    "paper-grid": paper_grid,
    "fixed-grid": fixed_grid,
    "harmonic-grid": harmonic_grid,
    "paper-grid+fixed": lambda: paper_grid() + fixed_grid(),
}


def parse_schedule(text: str) -> Schedule:
    parts = text.strip().split(":")
    name, args = parts[0], parts[1:]
    try:
        nums = [float(a) for a in args]
    except ValueError as exc:
        raise ConfigError(f"bad schedule {text!r}") from exc
    if name == "fixed" and len(nums) == 1:
        return fixed(nums[0])
    if name == "harmonic" and len(nums) == 2:
        return harmonic(*nums)
    if name in ("annealed", "annealed-state") and len(nums) in (2, 3):
        return annealed(*nums, per_state=name == "annealed-state")
    raise ConfigError(f"bad schedule {text!r}; expected fixed:A, harmonic:A:FLOOR or annealed:A:N0[:EXP]")


def parse_schedules(text: str) -> list[Schedule]:
    """A preset name or a comma-separated list of schedules."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]()
    return [parse_schedule(tok) for tok in text.split(",") if tok.strip()]
