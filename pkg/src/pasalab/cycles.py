"""Path/cycle structure of deterministic state maps and its statistics.

A deterministic skeleton composed with a deterministic preferred policy is a
functional graph on the states.  Walking it from every start state splits the
graph into paths and cycles; the union of the cycles is the recurrent set, the
states where a near-deterministic agent spends nearly all of its time.  The
leading-order moments of the first-walk cycle length follow birthday-problem
asymptotics: E(C1) = sqrt(pi*S/8), Var(C1) = (32-8*pi)*S/24.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels

# two-sided 99% normal quantile
Z99 = 2.5758293035489004


@dataclass(frozen=True)
class CycleDecomposition:
    """Result of walking a successor map from every start state.

    lengths[j] and terminated_on_self[j] describe walk j (0 length when the
    walk ran into previously visited territory); cycle_id[s] is the walk that
    discovered state s's cycle, -1 for non-recurrent states.
    """

    lengths: np.ndarray
    terminated_on_self: np.ndarray
    cycle_id: np.ndarray

    @property
    def S(self) -> int:
        return self.cycle_id.shape[0]

    @cached_property
    def in_cycle(self) -> np.ndarray:
        """Boolean mask of the recurrent set."""
        return self.cycle_id >= 0

    @property
    def union_states(self) -> np.ndarray:
        """Sorted recurrent states (the union of all cycles)."""
        return np.flatnonzero(self.in_cycle)

    @property
    def total(self) -> int:
        """C, the number of recurrent states."""
        return int(self.in_cycle.sum())

    def cycle_members(self, j: int) -> np.ndarray:
        """States of the cycle discovered by walk j (empty if none)."""
        return np.flatnonzero(self.cycle_id == j)


def compute_cycles(successor: np.ndarray, order: np.ndarray | None = None) -> CycleDecomposition:
    """Decompose a total successor map into per-walk cycles.

    Walks start from every state, by default in index order; a walk follows
    the map until it hits any previously visited state and records a cycle
    only when it closes on its own path.  O(S) time via three-color marking.
    """
    succ = np.ascontiguousarray(successor, dtype=np.int64)
    if succ.ndim != 1:
        raise ValueError("successor must be a vector")
    S = succ.shape[0]
    if S == 0:
        raise ValueError("successor map must be nonempty")
    if succ.min() < 0 or succ.max() >= S:
        raise ValueError("successor entries must be valid state indices")
    if order is not None:
        order = np.ascontiguousarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(S)):
            raise ValueError("order must be a permutation of all states")
    lengths, terminated, cycle_id = _kernels.decompose(succ, order)
    return CycleDecomposition(lengths=lengths, terminated_on_self=terminated, cycle_id=cycle_id)


def predicted_c1_mean(S: int) -> float:
    """Leading term of E(C1) for a uniform random successor map."""
    if S < 0:
        raise ValueError("S must be nonnegative")
    return math.sqrt(math.pi * S / 8.0)


def predicted_c1_variance(S: int) -> float:
    """Leading term of Var(C1) for a uniform random successor map."""
    if S < 0:
        raise ValueError("S must be nonnegative")
    return (32.0 - 8.0 * math.pi) * S / 24.0


def lemma1_mean_bound(S: int) -> float:
    """Upper bound on E(C): leading-term E(C1) times (ln S + 1)."""
    if S < 1:
        raise ValueError("S must be positive")
    return predicted_c1_mean(S) * (math.log(S) + 1.0)


def _mean_ci(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    m = float(x.mean())
    half = Z99 * float(x.std(ddof=1)) / math.sqrt(n)
    return m - half, m + half


def _variance_ci(x: np.ndarray) -> tuple[float, float]:
    # normal approximation: Var(s^2) ~ (m4 - s^4)/n
    n = x.shape[0]
    s2 = float(x.var(ddof=1))
    centered = x - x.mean()
    m4 = float((centered**4).mean())
    half = Z99 * math.sqrt(max(m4 - s2 * s2, 0.0) / n)
    return s2 - half, s2 + half


@dataclass(frozen=True)
class CycleStats:
    """Monte Carlo moments of C1 and C over uniformly sampled skeletons."""

    S: int
    trials: int
    mean_c1: float
    var_c1: float
    mean_c: float
    var_c: float
    ci99_mean_c1: tuple[float, float]
    ci99_var_c1: tuple[float, float]
    ci99_mean_c: tuple[float, float]
    predicted_mean_c1: float
    predicted_var_c1: float
    lemma1_bound: float

    @property
    def var_c_over_s_log_s(self) -> float:
        """Empirical Var(C) / (S ln S), reported rather than asserted."""
        if self.S < 2:
            return 0.0
        return self.var_c / (self.S * math.log(self.S))

    CSV_HEADER = (
        "S,trials,mean_c1,var_c1,mean_c,var_c,ci_low,ci_high,"
        "predicted_mean_c1,predicted_var_c1,lemma1_bound"
    )

    def csv_row(self) -> str:
        # ci_low/ci_high is the 99% CI of the sample mean of C1
        f = [
            self.mean_c1,
            self.var_c1,
            self.mean_c,
            self.var_c,
            self.ci99_mean_c1[0],
            self.ci99_mean_c1[1],
            self.predicted_mean_c1,
            self.predicted_var_c1,
            self.lemma1_bound,
        ]
        return f"{self.S},{self.trials}," + ",".join(repr(v) for v in f)


def monte_carlo_cycle_stats(
    S: int, trials: int, seed: int, batch_size: int = 512
) -> CycleStats:
    """Sample `trials` uniform successor maps and summarize C1 and C.

    Confidence intervals are normal approximations at the 99% level; the
    interval reported for the variance uses the fourth-central-moment
    standard error.
    """
    if S < 1:
        raise ValueError("S must be positive")
    if trials < 2:
        raise ValueError("need at least 2 trials for sample moments")
    rng = np.random.default_rng(seed)
    c1_parts = []
    c_parts = []
    remaining = trials
    while remaining > 0:
        b = min(batch_size, remaining)
        successors = rng.integers(0, S, size=(b, S), dtype=np.int64)
        c1, c = _kernels.batch_cycle_stats(successors)
        c1_parts.append(c1)
        c_parts.append(c)
        remaining -= b
    c1s = np.concatenate(c1_parts).astype(np.float64)
    cs = np.concatenate(c_parts).astype(np.float64)
    return CycleStats(
        S=S,
        trials=trials,
        mean_c1=float(c1s.mean()),
        var_c1=float(c1s.var(ddof=1)),
        mean_c=float(cs.mean()),
        var_c=float(cs.var(ddof=1)),
        ci99_mean_c1=_mean_ci(c1s),
        ci99_var_c1=_variance_ci(c1s),
        ci99_mean_c=_mean_ci(cs),
        predicted_mean_c1=predicted_c1_mean(S),
        predicted_var_c1=predicted_c1_variance(S),
        lemma1_bound=lemma1_mean_bound(S),
    )
