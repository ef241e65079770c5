"""Cell-action value table and SARSA(0) over the aggregated architecture.

The approximation is pure state aggregation: the estimate for (s, a) is the
weight of (cell_of(s), a).  The on-policy learner is SARSA(0) with constant
step size; when the partition changes, each cell inherits the weight row of
the old cell containing its lowest-index state, so no learning is discarded.
"""

from __future__ import annotations

import numpy as np

from .partition import PartitionTree


class CellValueTable:
    """X x A weight table with constant-step-size TD updates."""

    def __init__(self, X: int, A: int, alpha: float, theta: np.ndarray | None = None):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        self.X = X
        self.A = A
        self.alpha = alpha
        self.theta = np.zeros((X, A)) if theta is None else np.asarray(theta, dtype=np.float64).copy()
        if self.theta.shape != (X, A):
            raise ValueError(f"theta shape {self.theta.shape} != ({X}, {A})")

    def predict(self, tree: PartitionTree, state: int, action: int) -> float:
        if not 0 <= action < self.A:
            raise IndexError(f"action {action} out of range [0, {self.A})")
        return float(self.theta[tree.cell_of(state), action])

    def predict_all(self, tree: PartitionTree) -> np.ndarray:
        """Dense S x A table of predictions under the current partition."""
        cells = tree.cells_of(np.arange(tree.S))
        return self.theta[cells, :]

    def td_update(
        self,
        tree: PartitionTree,
        s: int,
        a: int,
        r: float,
        s_next: int,
        a_next: int,
        gamma: float,
    ):
        """SARSA(0): theta[c,a] += alpha * (r + gamma*theta[c',a'] - theta[c,a])."""
        c = tree.cell_of(s)
        c_next = tree.cell_of(s_next)
        target = r + gamma * float(self.theta[c_next, a_next])
        self.theta[c, a] += self.alpha * (target - float(self.theta[c, a]))

    def handle_resplit(self, old_tree: PartitionTree, new_tree: PartitionTree) -> None:
        """Remap weights after a partition change.

        Each new cell inherits the row of the old cell containing its
        lowest-index state; no row is zeroed.
        """
        if (old_tree.S, old_tree.B, old_tree.X) != (new_tree.S, new_tree.B, new_tree.X):
            raise ValueError("old and new trees must share (S, B, X)")
        if new_tree.X != self.X:
            raise ValueError("tree cell count does not match table")
        old_cells = old_tree.cells_of(new_tree.cell_lo)
        self.theta = self.theta[old_cells, :].copy()
