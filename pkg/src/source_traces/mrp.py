r"""Exact linear algebra for tabular Markov reward processes.

The value of an MRP solves ``(I - gamma P) v = r``.  The inverse
``S = (I - gamma P)^{-1}`` is the *source map*: column ``j`` is the ideal
source trace of state ``j`` (which states get credit for a reward at ``j``)
and row ``i`` is the successor representation of state ``i``.

Everything here is dense float64 and side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from ._io import atomic_write_text, fmt
from .errors import DimensionMismatch, InvalidMrp, SingularSystem

ROW_SUM_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mrp:
    """A finite discounted Markov reward process.

    Attributes
    ----------
    transition : (n, n) ndarray
        Row-stochastic matrix, ``transition[i, j] = p(s_i, s_j)``.
    reward : (n,) ndarray
        Expected reward received in each state.
    gamma : float
        Discount factor in ``[0, 1)``.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        P = _readonly(self.transition)
        r = _readonly(self.reward)
        g = float(self.gamma)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise DimensionMismatch(f"transition must be square, got shape {P.shape}")
        if r.shape != (P.shape[0],):
            raise DimensionMismatch(f"reward has shape {r.shape}, expected ({P.shape[0]},)")
        if not (0.0 <= g < 1.0):
            raise InvalidMrp(f"gamma must lie in [0, 1), got {g}")
        if not np.all(np.isfinite(r)):
            raise InvalidMrp("reward entries must be finite")
        if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
            raise InvalidMrp("transition probabilities must lie in [0, 1]")
        dev = np.abs(P.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise InvalidMrp(f"transition rows must sum to 1 (max deviation {dev:.3g})")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", g)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    def with_reward(self, reward) -> "Mrp":
        return Mrp(self.transition, reward, self.gamma)

    def system_matrix(self) -> np.ndarray:
        """``I - gamma P``, the inverse of the source map."""
        return np.eye(self.num_states) - self.gamma * self.transition

    # text serialization ------------------------------------------------

    def to_text(self) -> str:
        lines = [f"mrp,{self.num_states},{fmt(self.gamma)}"]
        lines += [",".join(fmt(x) for x in row) for row in self.transition]
        lines.append(",".join(fmt(x) for x in self.reward))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Mrp":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise InvalidMrp("empty MRP file")
        head = lines[0].split(",")
        if len(head) != 3 or head[0] != "mrp":
            raise InvalidMrp(f"bad header line {lines[0]!r}; expected 'mrp,<num_states>,<gamma>'")
        try:
            n = int(head[1])
            gamma = float(head[2])
        except ValueError as exc:
            raise InvalidMrp(f"bad header line {lines[0]!r}") from exc
        if len(lines) != n + 2:
            raise InvalidMrp(f"expected {n + 2} lines for {n} states, found {len(lines)}")
        try:
            rows = [[float(tok) for tok in ln.split(",")] for ln in lines[1:]]
        except ValueError as exc:
            raise InvalidMrp(f"non-numeric entry: {exc}") from exc
        if any(len(row) != n for row in rows):
            raise DimensionMismatch(f"every row must have {n} entries")
        return cls(np.array(rows[:n]), np.array(rows[n]), gamma)

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path) -> "Mrp":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class Construction:
    """How a source map was obtained: exact, n-step, lambda, partial or learned."""

    kind: str
    n: int | None = None
    lam: float | None = None

    def __str__(self):
        if self.kind == "partial":
            return f"partial({self.n},{self.lam:g})"
        if self.kind == "nstep":
            return f"nstep({self.n})"
        if self.kind == "lambda":
            return f"lambda({self.lam:g})"
        return self.kind


EXACT = Construction("exact")
LEARNED = Construction("learned")


@dataclass(frozen=True, eq=False)
class SourceMap:
    matrix: np.ndarray
    construction: Construction
    gamma_used: float

    def __post_init__(self):
        m = _readonly(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"source map must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0]

    def column(self, j: int) -> np.ndarray:
        """Source trace of state ``j``."""
        return self.matrix[:, j]

    def row(self, i: int) -> np.ndarray:
        """Successor representation of state ``i``."""
        return self.matrix[i, :]


def _as_matrix(s0) -> np.ndarray:
    return s0.matrix if isinstance(s0, SourceMap) else np.asarray(s0, dtype=float)


def _check_square(a: np.ndarray, n: int, what: str):
    if a.shape != (n, n):
        raise DimensionMismatch(f"{what} has shape {a.shape}, expected ({n}, {n})")


def _check_vector(x: np.ndarray, n: int, what: str):
    if x.shape != (n,):
        raise DimensionMismatch(f"{what} has shape {x.shape}, expected ({n},)")


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = scipy.linalg.solve(a, b, check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solve produced non-finite values")
    return x


def exact_value(mrp: Mrp) -> np.ndarray:
    """Solve ``(I - gamma P) v = r`` by LU factorization."""
    return _solve(mrp.system_matrix(), mrp.reward)


def exact_source_map(mrp: Mrp) -> SourceMap:
    """The full inverse ``(I - gamma P)^{-1}``."""
    n = mrp.num_states
    return SourceMap(_solve(mrp.system_matrix(), np.eye(n)), EXACT, mrp.gamma)


def lambda_source_map(mrp: Mrp, lam: float) -> SourceMap:
    """``S^lambda = (I - gamma lambda P)^{-1}``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    n = mrp.num_states
    a = np.eye(n) - mrp.gamma * lam * mrp.transition
    return SourceMap(_solve(a, np.eye(n)), Construction("lambda", lam=float(lam)), mrp.gamma)


def partial_source_map(mrp: Mrp, n: int, lam: float = 1.0) -> SourceMap:
    r"""Partial source map ``sum_{k=0}^{n-1} (gamma lambda P)^k``.

    ``n=1`` gives the identity (TD(0)); ``n -> inf, lambda=1`` recovers the
    exact map.  Accumulated term by term, no inversion.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    n = int(n)
    step = (mrp.gamma * lam) * mrp.transition
    term = np.eye(mrp.num_states)
    total = term.copy()
    for _ in range(n - 1):
        term = term @ step
        total += term
    return SourceMap(total, Construction("partial", n=n, lam=float(lam)), mrp.gamma)


def nstep_source_map(mrp: Mrp, n: int) -> SourceMap:
    s = partial_source_map(mrp, n, 1.0)
    return SourceMap(s.matrix, Construction("nstep", n=int(n)), mrp.gamma)


def induced_inf_norm(a: np.ndarray) -> float:
    """Max absolute row sum."""
    return float(np.abs(a).sum(axis=1).max())


def norm_defect(mrp: Mrp, s0) -> float:
    r"""``|| I - S^{-1} S_0 ||_inf`` with ``S^{-1} = I - gamma P`` (no inversion)."""
    m = _as_matrix(s0)
    n = mrp.num_states
    _check_square(m, n, "source map")
    return induced_inf_norm(np.eye(n) - mrp.system_matrix() @ m)


def partial_trace_bound(gamma: float, n: int, lam: float) -> float:
    """Upper bound on :func:`norm_defect` for the partial map ``S^lam_n``.

    ``gamma * (1 - lam (1 - gamma) sum_{k=0}^{n-2} (lam gamma)^k)``; equals
    ``gamma`` for ``n == 1`` or ``lam == 0``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x = lam * gamma
    if n == 1:
        partial = 0.0
    elif x == 1.0:
        partial = float(n - 1)
    else:
        partial = (1.0 - x ** (n - 1)) / (1.0 - x)
    return gamma * (1.0 - lam * (1.0 - gamma) * partial)


def source_backup_reward_delta(v, s0, j: int, delta_r: float) -> np.ndarray:
    """Propagate a change ``delta_r`` in the expected reward of state ``j``.

    Returns ``v + delta_r * S[:, j]``; O(|S|).
    """
    m = _as_matrix(s0)
    v = np.asarray(v, dtype=float)
    n = m.shape[0]
    _check_vector(v, n, "value vector")
    if not 0 <= j < n:
        raise IndexError(f"state index {j} out of range for {n} states")
    return v + delta_r * m[:, j]


def expected_td_error(mrp: Mrp, v) -> np.ndarray:
    """``r + gamma P v - v``: the expected TD error on leaving each state."""
    v = np.asarray(v, dtype=float)
    _check_vector(v, mrp.num_states, "value vector")
    return mrp.reward + mrp.gamma * (mrp.transition @ v) - v


def full_expected_backup(mrp: Mrp, s0, v0) -> np.ndarray:
    """Synchronous source backup ``v0 + S0 (r + gamma P v0 - v0)``.

    With the exact source map this lands on the true value in one sweep.
    """
    m = _as_matrix(s0)
    _check_square(m, mrp.num_states, "source map")
    v0 = np.asarray(v0, dtype=float)
    return v0 + m @ expected_td_error(mrp, v0)


def decomposition_error_terms(s_exact, s0, r_exact, r0):
    """Split ``S0 r0 - S r`` into ``(E r, S eps, E eps)``.

    ``E = S0 - S`` is the source-model error and ``eps = r0 - r`` the reward
    model error; the last term is where the two compound.
    """
    s = _as_matrix(s_exact)
    m = _as_matrix(s0)
    r = np.asarray(r_exact, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    n = s.shape[0]
    _check_square(s, n, "exact source map")
    _check_square(m, n, "source model")
    _check_vector(r, n, "reward")
    _check_vector(r0, n, "reward model")
    err_s = m - s
    err_r = r0 - r
    return err_s @ r, s @ err_r, err_s @ err_r
