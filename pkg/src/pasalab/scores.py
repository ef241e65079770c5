"""Scoring of value-function estimates.

L is the stationary-distribution-weighted sum over states of the squared
Bellman residuals of all actions; the exact MSE replaces the residual with
the distance to the true action values.  Per printed definition the inner
action sum is unweighted by the policy.  The expectation over next states
exploits the two-part kernel: a point mass at the skeleton successor plus
the noise average of the policy-averaged estimate, precomputed once per
call, so scoring is O(S*A).  Outer sums are accumulated with math.fsum to
keep oracle comparisons honest at ~1e6 terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum

import numpy as np

from .errors import CapacityError
from .learner import CellValueTable
from .mdp import NOISE_UNIFORM, MdpModel, Policy
from .partition import PartitionTree

DEFAULT_TERM_CAP = 10**6


def _residual_contributions(
    table: CellValueTable, tree: PartitionTree, model: MdpModel, policy: Policy
) -> np.ndarray:
    """Per-state sum over actions of squared Bellman residuals."""
    qhat = table.predict_all(tree)  # S x A
    pi = policy.probability_matrix()
    m = np.einsum("sa,sa->s", pi, qhat)  # policy-averaged estimate per state
    if model.noise_kind == NOISE_UNIFORM:
        noise_avg = np.full(model.S, m.mean())
    else:
        noise_avg = (m.sum() - m) / (model.S - 1)
    expected_next = (1.0 - model.delta) * m[model.skeleton] + model.delta * noise_avg[:, None]
    resid = model.rewards + model.gamma * expected_next - qhat
    return np.einsum("sa,sa->s", resid, resid)


def bellman_score(
    table: CellValueTable,
    tree: PartitionTree,
    model: MdpModel,
    policy: Policy,
    psi: np.ndarray,
    cap: int = DEFAULT_TERM_CAP,
) -> float:
    """Exact L over all states."""
    if model.S * model.A > cap:
        raise CapacityError(
            f"S*A = {model.S * model.A} exceeds the exact summation cap {cap}"
        )
    contrib = _residual_contributions(table, tree, model, policy)
    psi = np.asarray(psi, dtype=np.float64)
    return fsum((psi * contrib).tolist())


def restricted_score(
    table: CellValueTable,
    tree: PartitionTree,
    model: MdpModel,
    policy: Policy,
    psi: np.ndarray,
    subset: np.ndarray,
    cap: int = DEFAULT_TERM_CAP,
) -> float:
    """L with the outer state sum restricted to a subset of states."""
    if model.S * model.A > cap:
        raise CapacityError(
            f"S*A = {model.S * model.A} exceeds the exact summation cap {cap}"
        )
    subset = np.asarray(subset)
    if subset.dtype == bool:
        subset = np.flatnonzero(subset)
    if subset.size == 0:
        return 0.0
    if subset.min() < 0 or subset.max() >= model.S:
        raise IndexError("subset contains out-of-range states")
    contrib = _residual_contributions(table, tree, model, policy)
    psi = np.asarray(psi, dtype=np.float64)
    return fsum((psi[subset] * contrib[subset]).tolist())


def mse_score(
    table: CellValueTable, tree: PartitionTree, q_true: np.ndarray, psi: np.ndarray
) -> float:
    """Exact weighted squared error against the true action values."""
    if q_true is None:
        raise ValueError("q_true is unavailable; compute exact action values first")
    diff = np.asarray(q_true, dtype=np.float64) - table.predict_all(tree)
    contrib = np.einsum("sa,sa->s", diff, diff)
    psi = np.asarray(psi, dtype=np.float64)
    return fsum((psi * contrib).tolist())


@dataclass(frozen=True)
class ScoreReport:
    """One scoring snapshot; mse is None when true values were not computed."""

    L: float
    mse: float | None
    L_outside_recurrent: float
    psi_used: np.ndarray

    def __post_init__(self):
        if self.L < 0 or self.L_outside_recurrent < -1e-15:
            raise ValueError("scores must be nonnegative")


def score_report(
    table: CellValueTable,
    tree: PartitionTree,
    model: MdpModel,
    policy: Policy,
    psi: np.ndarray,
    recurrent_mask: np.ndarray,
    q_true: np.ndarray | None = None,
) -> ScoreReport:
    """Bundle L, optional MSE, and the non-recurrent share of L."""
    L = bellman_score(table, tree, model, policy, psi)
    outside = restricted_score(table, tree, model, policy, psi, ~np.asarray(recurrent_mask, dtype=bool))
    mse = None if q_true is None else mse_score(table, tree, q_true, psi)
    return ScoreReport(L=L, mse=mse, L_outside_recurrent=outside, psi_used=np.asarray(psi))
