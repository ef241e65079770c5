"""Pure-Python backend for the hot kernels.

Semantics reference for the compiled backend: the simulation loop performs
the same IEEE double operations in the same order, so results are
bit-identical across backends (exponential decay uses the same in-process
libm pow via CPython's float power).
"""

from __future__ import annotations

import numpy as np


def decompose(successor: np.ndarray, order: np.ndarray | None = None):
    """Walk the functional graph from every start state in order.

    Returns (lengths, terminated, cycle_id): lengths[j] is the size of the
    cycle discovered by walk j (0 if walk j ran into already-visited
    territory), terminated[j] flags walks that closed on their own path, and
    cycle_id[s] is the walk index that discovered state s's cycle (-1 for
    non-recurrent states).
    """
    S = successor.shape[0]
    succ = successor.tolist()
    starts = range(S) if order is None else order.tolist()
    lengths = np.zeros(S, dtype=np.int64)
    terminated = np.zeros(S, dtype=bool)
    cycle_id = np.full(S, -1, dtype=np.int64)
    color = bytearray(S)  # 0 unvisited, 1 on current path, 2 finalized
    pos = [0] * S
    for j, start in enumerate(starts):
        path = []
        x = start
        while color[x] == 0:
            color[x] = 1
            pos[x] = len(path)
            path.append(x)
            x = succ[x]
        if color[x] == 1:
            cut = pos[x]
            terminated[j] = True
            lengths[j] = len(path) - cut
            for y in path[cut:]:
                cycle_id[y] = j
        for y in path:
            color[y] = 2
    return lengths, terminated, cycle_id


def batch_cycle_stats(successors: np.ndarray):
    """Per-trial (C1, C) for a batch of successor maps, shape (trials, S).

    C is computed by pointer doubling (the image of the S-fold iterate is
    exactly the set of recurrent states), C1 by walking from state 0; both
    agree with a full decompose() pass.
    """
    n, S = successors.shape
    c1 = np.empty(n, dtype=np.int64)
    c = np.empty(n, dtype=np.int64)
    iterate = successors.copy()
    hops = 1
    while hops < S:
        iterate = np.take_along_axis(iterate, iterate, axis=1)
        hops *= 2
    for i in range(n):
        c[i] = np.unique(iterate[i]).size
    for i in range(n):
        succ = successors[i].tolist()
        pos = {}
        x = 0
        k = 0
        while x not in pos:
            pos[x] = k
            x = succ[x]
            k += 1
        c1[i] = k - pos[x]
    return c1, c


def eval_chunk(
    skeleton,  # int64[S, A]
    rewards,  # float64[S, A]
    preferred,  # int64[S]
    S: int,
    A: int,
    delta: float,
    delta_pi: float,
    gamma: float,
    noise_excluding: int,
    q: int,  # base cell size quotient
    threshold: int,  # states below this sit in the (q+1)-sized base cells
    root,  # int64[B]: first split node of each base cell, -1 if none
    node_mid,  # int64[K]
    lower_child,  # int64[K]
    upper_child,  # int64[K]
    lower_cell,  # int64[K]: cell index kept by the lower half (= split vector)
    B: int,
    theta,  # float64[X, A], mutated in place
    alpha: float,
    ubar_val,  # float64[X], mutated in place
    ubar_ts,  # int64[X], mutated in place
    eta: float,
    enable_pasa: int,
    t0: int,
    state: int,
    action: int,
    quads,  # float64[n, 4]
):
    """Run n iterations of environment step + TD update + visit tracking.

    The partition is fixed for the whole chunk; the caller handles
    reselections between chunks.  Consumes exactly one row of ``quads`` per
    iteration: (transition-perturb, transition-target, action-deviate,
    action-which).  Returns the carried (state, action).
    """
    n = quads.shape[0]
    skel = skeleton.ravel().tolist()
    rew = rewards.ravel().tolist()
    pref = preferred.tolist()
    root_l = root.tolist()
    mid_l = node_mid.tolist()
    lch = lower_child.tolist()
    uch = upper_child.tolist()
    lcell = lower_cell.tolist()
    ql = quads.ravel().tolist()
    theta_flat = theta.reshape(-1)
    one_minus_eta = 1.0 - eta
    qp1 = q + 1
    s = state
    a = action
    for i in range(n):
        t = t0 + i
        base = 4 * i
        u0 = ql[base]
        u1 = ql[base + 1]
        u2 = ql[base + 2]
        u3 = ql[base + 3]
        rwd = rew[s * A + a]
        # transition
        if u0 < delta:
            if noise_excluding:
                s2 = int(u1 * (S - 1))
                if s2 >= S - 1:
                    s2 = S - 2
                if s2 >= s:
                    s2 += 1
            else:
                s2 = int(u1 * S)
                if s2 >= S:
                    s2 = S - 1
        else:
            s2 = skel[s * A + a]
        # next action
        p2 = pref[s2]
        if A > 1 and u2 < delta_pi:
            j = int(u3 * (A - 1))
            if j >= A - 1:
                j = A - 2
            a2 = j + 1 if j >= p2 else j
        else:
            a2 = p2
        # cell of s2 (plain walk)
        b2 = s2 // qp1 if s2 < threshold else (s2 - threshold) // q + (threshold // qp1)
        node = root_l[b2]
        if node < 0:
            c2 = b2
        else:
            while True:
                if s2 >= mid_l[node]:
                    child = uch[node]
                    leaf = B + node
                else:
                    child = lch[node]
                    leaf = lcell[node]
                if child < 0:
                    c2 = leaf
                    break
                node = child
        # cell of s, updating visit frequencies along the created-cell path
        b1 = s // qp1 if s < threshold else (s - threshold) // q + (threshold // qp1)
        if enable_pasa:
            dt = t - int(ubar_ts[b1])
            v = float(ubar_val[b1]) * one_minus_eta**dt
            ubar_val[b1] = v + eta * (1.0 - v)
            ubar_ts[b1] = t + 1
        node = root_l[b1]
        if node < 0:
            c = b1
        else:
            while True:
                if s >= mid_l[node]:
                    if enable_pasa:
                        idx = B + node
                        dt = t - int(ubar_ts[idx])
                        v = float(ubar_val[idx]) * one_minus_eta**dt
                        ubar_val[idx] = v + eta * (1.0 - v)
                        ubar_ts[idx] = t + 1
                    child = uch[node]
                    leaf = B + node
                else:
                    child = lch[node]
                    leaf = lcell[node]
                if child < 0:
                    c = leaf
                    break
                node = child
        # SARSA(0)
        ca = c * A + a
        target = rwd + gamma * float(theta_flat[c2 * A + a2])
        old = float(theta_flat[ca])
        theta_flat[ca] = old + alpha * (target - old)
        s = s2
        a = a2
    return s, a
