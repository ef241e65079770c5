"""Adaptive state aggregation driven by visit frequencies.

Each iteration, the estimator nudges a per-cell frequency vector u_bar toward
the sparse visit indicator of the current state (step size eta).  Every nu
iterations the split vector is re-derived: working on a scratch copy u of
u_bar, stage k picks the non-singleton cell with the largest u among the
cells of partition k, replaces rho_k with it only if it beats the incumbent's
score by more than the hysteresis threshold, subtracts the mass of the cell
the split creates, applies the split, and refreshes the singleton mask.  The
partition is then rebuilt from the (possibly unchanged) split vector.

The scratch subtraction uses whatever u_{B+k} currently holds; right after an
upstream rho change that value can be stale and intermediate scratch entries
may go negative.  That is intentional: a negative scratch value only weakens
a cell's claim to be split, and the tracked frequencies re-converge at rate
(1 - eta) without any reset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ReselectionError
from .partition import PartitionTree, _Builder

DEFAULT_ETA = 0.01
DEFAULT_THRESHOLD = 0.02


@dataclass(frozen=True)
class PasaConfig:
    """Step size eta, hysteresis threshold, and reselection interval.

    nu = None resolves to max(1000, 10 * X): large enough that tracked
    frequencies settle between reselections at the default eta.
    """

    eta: float = DEFAULT_ETA
    theta_threshold: float = DEFAULT_THRESHOLD
    nu: int | None = None

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.theta_threshold <= 0.0:
            raise ValueError(f"theta_threshold must be positive, got {self.theta_threshold}")
        if self.nu is not None and self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")

    def resolved_nu(self, X: int) -> int:
        return self.nu if self.nu is not None else max(1000, 10 * X)


class VisitEstimator:
    """Exponential moving average of sparse visit indicators, decayed lazily.

    Entry i tracks the frequency of the region cell i's indicator watches
    (its creation-time extent).  Values are stored with a last-touched
    timestamp; untouched entries decay implicitly, so a step costs only the
    handful of cells on the state's split path.  Materializing at time T
    multiplies by (1-eta)^(T - ts), which agrees with the eager recursion to
    ~1e-12 over any horizon.
    """

    def __init__(self, X: int, eta: float, values: np.ndarray | None = None):
        if not 0.0 < eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {eta}")
        self.X = X
        self.eta = eta
        self.values = np.zeros(X) if values is None else np.asarray(values, dtype=np.float64).copy()
        if self.values.shape != (X,):
            raise ValueError("values shape mismatch")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("initial values must lie in [0, 1]")
        self.timestamps = np.zeros(X, dtype=np.int64)

    @classmethod
    def initialized(cls, tree: PartitionTree, eta: float) -> "VisitEstimator":
        """Start from the uniform-visit prior: creation-extent size / S."""
        values = np.empty(tree.X)
        for i in range(tree.X):
            lo, hi = tree.creation_extent(i)
            values[i] = (hi - lo) / tree.S
        return cls(tree.X, eta, values)

    def materialized(self, now: int) -> np.ndarray:
        """The full frequency vector as of time `now` (>= all timestamps)."""
        dt = now - self.timestamps
        if dt.min() < 0:
            raise ValueError("materialization time precedes a recorded update")
        return self.values * (1.0 - self.eta) ** dt

    def observe(self, tree: PartitionTree, state: int, t: int):
        """Apply the time-t update: push indicator cells toward 1."""
        eta = self.eta
        for i in tree.indicator_cells(state).tolist():
            dt = int(t - self.timestamps[i])
            if dt < 0:
                raise ValueError("observation time precedes a recorded update")
            v = float(self.values[i]) * (1.0 - eta) ** dt
            self.values[i] = v + eta * (1.0 - v)
            self.timestamps[i] = t + 1

    def storage_entry_count(self) -> int:
        return int(self.values.size + self.timestamps.size)


@dataclass
class ReselectStep:
    """One stage of the reselection sequence, for tracing and golden tests."""

    k: int
    argmax_cell: int
    argmax_value: float
    incumbent: int
    incumbent_score: float
    replaced: bool
    chosen: int
    u_after: np.ndarray = field(repr=False)


def reselect(
    estimator: VisitEstimator,
    tree: PartitionTree,
    config: PasaConfig,
    now: int,
    record_trace: bool = False,
) -> tuple[PartitionTree, bool, list[ReselectStep] | None]:
    """Run the full X-B stage reselection sequence and rebuild the tree.

    Returns (new tree, whether rho changed, optional per-stage trace).  The
    tree is rebuilt from scratch from the resulting split vector, so the
    partition stays a pure function of (S, B, rho).
    """
    S, B, X = tree.S, tree.B, tree.X
    threshold = config.theta_threshold
    u = estimator.materialized(now).copy()
    rho = tree.rho.copy()
    sigma = np.zeros(X, dtype=bool)
    builder = _Builder(S, B, X)
    trace: list[ReselectStep] | None = [] if record_trace else None
    changed = False
    for k in range(X - B):
        limit = B + k
        pool = u[:limit].copy()
        pool[sigma[:limit]] = -np.inf
        i_max = int(np.argmax(pool))
        u_max = float(pool[i_max])
        if not np.isfinite(u_max):
            raise ReselectionError(f"no splittable cell at stage {k}")
        incumbent = int(rho[k])
        incumbent_score = 0.0 if sigma[incumbent] else float(u[incumbent])
        replaced = u_max - threshold > incumbent_score
        if replaced:
            rho[k] = i_max
            changed = True
        target = int(rho[k])
        u[target] -= u[B + k]
        if builder.size(target) < 2:
            raise ReselectionError(
                f"stage {k} left singleton cell {target} as the split target; "
                "the singleton mask should make this unreachable"
            )
        builder.split(target)
        sigma = builder.live_sigma()
        if trace is not None:
            trace.append(
                ReselectStep(
                    k=k,
                    argmax_cell=i_max,
                    argmax_value=u_max,
                    incumbent=incumbent,
                    incumbent_score=incumbent_score,
                    replaced=replaced,
                    chosen=target,
                    u_after=u.copy(),
                )
            )
    if changed:
        new_tree = PartitionTree.build(S, B, rho)
    else:
        new_tree = tree
    return new_tree, changed, trace


def pasa_tick(
    t: int,
    state: int,
    estimator: VisitEstimator,
    tree: PartitionTree,
    config: PasaConfig,
) -> tuple[PartitionTree, bool]:
    """One iteration of the adaptation loop: observe, then maybe reselect.

    Reselection fires when t is a multiple of the (resolved) interval and
    sees the frequency vector as updated by this iteration's observation.
    Returns the (possibly new) tree and whether a reselection changed rho.
    """
    estimator.observe(tree, state, t)
    if t % config.resolved_nu(tree.X) == 0:
        tree, changed, _ = reselect(estimator, tree, config, now=t + 1)
        return tree, changed
    return tree, False
