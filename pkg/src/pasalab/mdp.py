"""Near-deterministic finite MDPs under a fixed policy.

The transition kernel is a mixture of a deterministic skeleton (each
state-action pair has one designated successor) and a small-probability
perturbation: with probability ``1 - delta`` the skeleton successor is taken,
with probability ``delta`` the next state is drawn from a noise distribution.
Policies have the same shape: one preferred action per state, taken with
probability ``1 - delta_pi``, the remaining probability spread uniformly over
the other actions.

States, actions and cells are 0-indexed everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConvergenceError

NOISE_UNIFORM = "uniform"
NOISE_UNIFORM_EXCLUDING_CURRENT = "uniform-excluding-current"
NOISE_KINDS = (NOISE_UNIFORM, NOISE_UNIFORM_EXCLUDING_CURRENT)

DEFAULT_EXACT_SOLVE_CAP = 16384
DENSE_SOLVE_MAX_STATES = 2048
POWER_ITERATION_CAP = 10**6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MdpModel:
    """Transition skeleton + delta-perturbation, rewards and discount.

    skeleton[s, a] is the deterministic successor of (s, a); rewards[s, a]
    the (bounded) reward.  The effective kernel is
    P(s'|s,a) = (1-delta) * 1{s' == skeleton[s,a]} + delta * noise(s'|s).
    """

    S: int
    A: int
    skeleton: np.ndarray
    rewards: np.ndarray
    delta: float
    gamma: float
    noise_kind: str = NOISE_UNIFORM

    def __post_init__(self):
        if self.S < 1 or self.A < 1:
            raise ValueError(f"state/action counts must be positive, got S={self.S}, A={self.A}")
        skeleton = _frozen(np.asarray(self.skeleton, dtype=np.int64))
        rewards = _frozen(np.asarray(self.rewards, dtype=np.float64))
        if skeleton.shape != (self.S, self.A):
            raise ValueError(f"skeleton shape {skeleton.shape} != ({self.S}, {self.A})")
        if rewards.shape != (self.S, self.A):
            raise ValueError(f"rewards shape {rewards.shape} != ({self.S}, {self.A})")
        if skeleton.min() < 0 or skeleton.max() >= self.S:
            raise ValueError("skeleton entries must be valid state indices")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}, expected one of {NOISE_KINDS}")
        if self.noise_kind == NOISE_UNIFORM_EXCLUDING_CURRENT and self.S == 1:
            raise ValueError("uniform-excluding-current noise needs S >= 2")
        object.__setattr__(self, "skeleton", skeleton)
        object.__setattr__(self, "rewards", rewards)


@dataclass(frozen=True)
class Policy:
    """Near-deterministic policy: preferred action per state.

    pi(preferred[s] | s) = 1 - delta_pi, every other action delta_pi/(A-1).
    delta_pi is forced to 0 when A == 1.
    """

    S: int
    A: int
    preferred: np.ndarray
    delta_pi: float

    def __post_init__(self):
        if self.S < 1 or self.A < 1:
            raise ValueError(f"state/action counts must be positive, got S={self.S}, A={self.A}")
        preferred = _frozen(np.asarray(self.preferred, dtype=np.int64))
        if preferred.shape != (self.S,):
            raise ValueError(f"preferred shape {preferred.shape} != ({self.S},)")
        if preferred.min() < 0 or preferred.max() >= self.A:
            raise ValueError("preferred entries must be valid action indices")
        if not 0.0 <= self.delta_pi <= 1.0:
            raise ValueError(f"delta_pi must lie in [0, 1], got {self.delta_pi}")
        if self.A == 1 and self.delta_pi != 0.0:
            object.__setattr__(self, "delta_pi", 0.0)
        object.__setattr__(self, "preferred", preferred)

    def action_probabilities(self, state: int) -> np.ndarray:
        """Probability row pi(.|state)."""
        if not 0 <= state < self.S:
            raise IndexError(f"state {state} out of range [0, {self.S})")
        p = np.full(self.A, self.delta_pi / (self.A - 1) if self.A > 1 else 0.0)
        p[self.preferred[state]] = 1.0 - self.delta_pi
        return p

    def probability_matrix(self) -> np.ndarray:
        """Dense S x A matrix of pi(a|s)."""
        p = np.full((self.S, self.A), self.delta_pi / (self.A - 1) if self.A > 1 else 0.0)
        p[np.arange(self.S), self.preferred] = 1.0 - self.delta_pi
        return p


@dataclass(frozen=True)
class StationaryDistribution:
    """Left fixed point of the state transition matrix, psi^T M = psi^T."""

    psi: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        psi = _frozen(np.asarray(self.psi, dtype=np.float64))
        if psi.ndim != 1:
            raise ValueError("psi must be a vector")
        if psi.min() < -1e-12:
            raise ValueError("psi entries must be nonnegative")
        if abs(psi.sum() - 1.0) > 1e-12:
            raise ValueError("psi must sum to 1")
        object.__setattr__(self, "psi", psi)


def sample_skeleton(S: int, A: int, seed: int) -> np.ndarray:
    """Draw a deterministic successor table, each entry i.i.d. uniform on [0, S)."""
    if S < 1 or A < 1:
        raise ValueError(f"state/action counts must be positive, got S={S}, A={A}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, S, size=(S, A), dtype=np.int64)


def sample_rewards(S: int, A: int, seed: int) -> np.ndarray:
    """Draw an i.i.d. uniform-on-[0,1) reward table."""
    if S < 1 or A < 1:
        raise ValueError(f"state/action counts must be positive, got S={S}, A={A}")
    rng = np.random.default_rng(seed)
    return rng.random(size=(S, A))


def sample_policy(S: int, A: int, delta_pi: float, seed: int) -> Policy:
    """Draw a policy with i.i.d. uniform preferred actions."""
    if not 0.0 <= delta_pi <= 1.0:
        raise ValueError(f"delta_pi must lie in [0, 1], got {delta_pi}")
    rng = np.random.default_rng(seed)
    preferred = rng.integers(0, A, size=S, dtype=np.int64)
    return Policy(S=S, A=A, preferred=preferred, delta_pi=delta_pi if A > 1 else 0.0)


def sample_model(
    S: int,
    A: int,
    delta: float,
    gamma: float,
    seed: int,
    noise_kind: str = NOISE_UNIFORM,
) -> MdpModel:
    """Draw skeleton and rewards from independent streams derived from one seed."""
    skel_seed, reward_seed = np.random.SeedSequence(seed).spawn(2)
    rng_s = np.random.default_rng(skel_seed)
    rng_r = np.random.default_rng(reward_seed)
    skeleton = rng_s.integers(0, S, size=(S, A), dtype=np.int64)
    rewards = rng_r.random(size=(S, A))
    return MdpModel(S=S, A=A, skeleton=skeleton, rewards=rewards, delta=delta, gamma=gamma, noise_kind=noise_kind)


def sample_action(policy: Policy, state: int, u_deviate: float, u_which: float) -> int:
    """Map two uniforms to an action draw from pi(.|state).

    Consumes both uniforms regardless of the branch so that callers drawing
    fixed-size blocks stay stream-aligned.
    """
    pref = int(policy.preferred[state])
    if policy.A == 1 or u_deviate >= policy.delta_pi:
        return pref
    j = int(u_which * (policy.A - 1))
    if j >= policy.A - 1:
        j = policy.A - 2
    return j + 1 if j >= pref else j


def sample_successor(model: MdpModel, state: int, action: int, u_perturb: float, u_target: float) -> int:
    """Map two uniforms to a successor draw from P(.|state, action)."""
    if u_perturb >= model.delta:
        return int(model.skeleton[state, action])
    if model.noise_kind == NOISE_UNIFORM:
        s2 = int(u_target * model.S)
        return model.S - 1 if s2 >= model.S else s2
    s2 = int(u_target * (model.S - 1))
    if s2 >= model.S - 1:
        s2 = model.S - 2
    return s2 + 1 if s2 >= state else s2


def step(
    model: MdpModel, policy: Policy, state: int, rng: np.random.Generator
) -> tuple[int, int, float]:
    """One environment transition: sample action, then successor.

    Always consumes exactly four uniform doubles from ``rng`` (two for the
    action, two for the transition), so trajectories are reproducible from
    the raw double stream alone.
    """
    if not 0 <= state < model.S:
        raise IndexError(f"state {state} out of range [0, {model.S})")
    u = rng.random(4)
    action = sample_action(policy, state, u[0], u[1])
    next_state = sample_successor(model, state, action, u[2], u[3])
    reward = float(model.rewards[state, action])
    return action, next_state, reward


def transition_kernel(model: MdpModel) -> np.ndarray:
    """Dense P(s'|s,a) of shape (S, A, S).  Intended for small S only."""
    S, A = model.S, model.A
    if model.noise_kind == NOISE_UNIFORM:
        P = np.full((S, A, S), model.delta / S)
    else:
        P = np.full((S, A, S), model.delta / (S - 1))
        P[np.arange(S), :, np.arange(S)] = 0.0
    s_idx = np.repeat(np.arange(S), A)
    a_idx = np.tile(np.arange(A), S)
    np.add.at(P, (s_idx, a_idx, model.skeleton[s_idx, a_idx]), 1.0 - model.delta)
    return P


def transition_matrix(model: MdpModel, policy: Policy) -> np.ndarray:
    """State transition matrix under the policy: M[s,s'] = sum_a pi(a|s) P(s'|s,a)."""
    if model.S != policy.S or model.A != policy.A:
        raise ValueError("model and policy dimensions disagree")
    S, A = model.S, model.A
    if model.noise_kind == NOISE_UNIFORM:
        M = np.full((S, S), model.delta / S)
    else:
        M = np.full((S, S), model.delta / (S - 1))
        np.fill_diagonal(M, 0.0)
    pi = policy.probability_matrix()
    s_idx = np.repeat(np.arange(S), A)
    a_idx = np.tile(np.arange(A), S)
    np.add.at(M, (s_idx, model.skeleton[s_idx, a_idx]), (1.0 - model.delta) * pi[s_idx, a_idx])
    return M


def stationary_distribution(matrix: np.ndarray, tol: float = 1e-12) -> StationaryDistribution:
    """Solve psi^T M = psi^T, sum(psi) = 1.

    Direct solve of the balance equations up to DENSE_SOLVE_MAX_STATES states,
    power iteration above.  Raises ConvergenceError when the fixed point is
    not unique or iteration stalls (e.g. reducible or periodic chains with
    delta = 0).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = np.asarray(matrix, dtype=np.float64)
    S = M.shape[0]
    if M.shape != (S, S):
        raise ValueError("matrix must be square")
    if np.abs(M.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("matrix rows must sum to 1")
    if S <= DENSE_SOLVE_MAX_STATES:
        A = M.T - np.eye(S)
        A[-1, :] = 1.0
        b = np.zeros(S)
        b[-1] = 1.0
        try:
            psi = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"stationary distribution is not unique: {exc}") from exc
        residual = float(np.abs(psi @ M - psi).max())
        if residual > tol or psi.min() < -1e-9:
            raise ConvergenceError(
                f"direct solve residual {residual:.3e} exceeds tol {tol:.3e}", residual=residual
            )
        psi = np.maximum(psi, 0.0)
        psi /= psi.sum()
        return StationaryDistribution(psi=psi, residual=residual)
    psi = np.full(S, 1.0 / S)
    for _ in range(POWER_ITERATION_CAP):
        nxt = psi @ M
        nxt /= nxt.sum()
        if np.abs(nxt - psi).max() <= 0.1 * tol:
            psi = nxt
            break
        psi = nxt
    residual = float(np.abs(psi @ M - psi).max())
    if residual > tol:
        raise ConvergenceError(
            f"power iteration residual {residual:.3e} exceeds tol {tol:.3e}", residual=residual
        )
    return StationaryDistribution(psi=psi, residual=residual)


def policy_mean_rewards(model: MdpModel, policy: Policy) -> np.ndarray:
    """r_pi[s] = sum_a pi(a|s) R(s,a)."""
    return np.einsum("sa,sa->s", policy.probability_matrix(), model.rewards)


def _expected_next_value(model: MdpModel, v: np.ndarray) -> np.ndarray:
    """E[v(s')|s,a] for all pairs, exploiting the two-part kernel."""
    if model.noise_kind == NOISE_UNIFORM:
        noise_avg = np.full(model.S, v.mean())
    else:
        noise_avg = (v.sum() - v) / (model.S - 1)
    return (1.0 - model.delta) * v[model.skeleton] + model.delta * noise_avg[:, None]


def exact_action_values(
    model: MdpModel,
    policy: Policy,
    tol: float = 1e-10,
    cap: int = DEFAULT_EXACT_SOLVE_CAP,
) -> np.ndarray:
    """Solve the linear Bellman system for Q^pi exactly.

    Reduces to the S-dimensional system (I - gamma*M) v = r_pi with
    v(s) = sum_a pi(a|s) Q(s,a), then expands Q = R + gamma * E[v(s')|s,a].
    Dense solve; raises CapacityError above the S*A cap.
    """
    if model.S * model.A > cap:
        raise CapacityError(
            f"S*A = {model.S * model.A} exceeds exact-solve cap {cap}; "
            "use sampled evaluation or raise the cap"
        )
    M = transition_matrix(model, policy)
    r_pi = policy_mean_rewards(model, policy)
    v = np.linalg.solve(np.eye(model.S) - model.gamma * M, r_pi)
    residual = float(np.abs(v - model.gamma * (M @ v) - r_pi).max())
    if residual > tol:
        raise ConvergenceError(
            f"Bellman solve residual {residual:.3e} exceeds tol {tol:.3e}", residual=residual
        )
    return model.rewards + model.gamma * _expected_next_value(model, v)


def model_to_dict(model: MdpModel, policy: Policy, seed_provenance: dict | None = None) -> dict:
    """JSON-ready document describing a model/policy pair for replay."""
    return {
        "S": model.S,
        "A": model.A,
        "delta": model.delta,
        "gamma": model.gamma,
        "noise_kind": model.noise_kind,
        "skeleton": [int(x) for x in model.skeleton.ravel()],
        "rewards": [float(x) for x in model.rewards.ravel()],
        "preferred": [int(x) for x in policy.preferred],
        "delta_pi": policy.delta_pi,
        "seed_provenance": seed_provenance or {},
    }


def model_from_dict(doc: dict) -> tuple[MdpModel, Policy]:
    """Inverse of model_to_dict."""
    S, A = int(doc["S"]), int(doc["A"])
    model = MdpModel(
        S=S,
        A=A,
        skeleton=np.asarray(doc["skeleton"], dtype=np.int64).reshape(S, A),
        rewards=np.asarray(doc["rewards"], dtype=np.float64).reshape(S, A),
        delta=float(doc["delta"]),
        gamma=float(doc["gamma"]),
        noise_kind=doc.get("noise_kind", NOISE_UNIFORM),
    )
    policy = Policy(
        S=S, A=A, preferred=np.asarray(doc["preferred"], dtype=np.int64), delta_pi=float(doc["delta_pi"])
    )
    return model, policy
