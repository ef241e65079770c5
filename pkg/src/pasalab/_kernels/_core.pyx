# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled backend for the hot kernels.

Must stay operation-for-operation identical to ``_pure``: same IEEE double
arithmetic in the same order (no fast-math, decay via libm pow), so that the
two backends produce bit-identical trajectories.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


def decompose(cnp.int64_t[::1] successor, order=None):
    """Walk the functional graph from every start state in order.

    Same contract as the pure backend: returns (lengths, terminated,
    cycle_id) indexed by walk number (lengths, terminated) and by state
    (cycle_id).
    """
    cdef Py_ssize_t S = successor.shape[0]
    cdef cnp.int64_t[::1] starts
    if order is None:
        starts = np.arange(S, dtype=np.int64)
    else:
        starts = np.ascontiguousarray(order, dtype=np.int64)
    lengths_arr = np.zeros(S, dtype=np.int64)
    terminated_arr = np.zeros(S, dtype=bool)
    cycle_id_arr = np.full(S, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] lengths = lengths_arr
    cdef cnp.uint8_t[::1] terminated = terminated_arr.view(np.uint8)
    cdef cnp.int64_t[::1] cycle_id = cycle_id_arr
    color_arr = np.zeros(S, dtype=np.uint8)
    pos_arr = np.zeros(S, dtype=np.int64)
    path_arr = np.zeros(S, dtype=np.int64)
    cdef cnp.uint8_t[::1] color = color_arr
    cdef cnp.int64_t[::1] pos = pos_arr
    cdef cnp.int64_t[::1] path = path_arr
    cdef Py_ssize_t j, plen, k
    cdef cnp.int64_t x, cut
    for j in range(S):
        plen = 0
        x = starts[j]
        while color[x] == 0:
            color[x] = 1
            pos[x] = plen
            path[plen] = x
            plen += 1
            x = successor[x]
        if color[x] == 1:
            cut = pos[x]
            terminated[j] = 1
            lengths[j] = plen - cut
            for k in range(cut, plen):
                cycle_id[path[k]] = j
        for k in range(plen):
            color[path[k]] = 2
    return lengths_arr, terminated_arr, cycle_id_arr


def batch_cycle_stats(successors):
    """Per-trial (C1, C) for a batch of successor maps, shape (trials, S)."""
    succ_arr = np.ascontiguousarray(successors, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] succ = succ_arr
    cdef Py_ssize_t n = succ.shape[0]
    cdef Py_ssize_t S = succ.shape[1]
    c1_arr = np.empty(n, dtype=np.int64)
    c_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] c1 = c1_arr
    cdef cnp.int64_t[::1] c = c_arr
    visited_arr = np.full(S, -1, dtype=np.int64)
    onpath_arr = np.full(S, -1, dtype=np.int64)
    pos_arr = np.zeros(S, dtype=np.int64)
    path_arr = np.zeros(S, dtype=np.int64)
    cdef cnp.int64_t[::1] visited = visited_arr
    cdef cnp.int64_t[::1] onpath = onpath_arr
    cdef cnp.int64_t[::1] pos = pos_arr
    cdef cnp.int64_t[::1] path = path_arr
    cdef Py_ssize_t trial, start, k, plen
    cdef cnp.int64_t x, total, cyc
    for trial in range(n):
        total = 0
        for start in range(S):
            plen = 0
            x = start
            while visited[x] != trial:
                visited[x] = trial
                onpath[x] = trial
                pos[x] = plen
                path[plen] = x
                plen += 1
                x = succ[trial, x]
            if onpath[x] == trial:
                cyc = plen - pos[x]
                total += cyc
                if start == 0:
                    c1[trial] = cyc
            for k in range(plen):
                onpath[path[k]] = -1
        c[trial] = total
    return c1_arr, c_arr


def eval_chunk(
    skeleton,
    rewards,
    preferred,
    S: int,
    A: int,
    delta: float,
    delta_pi: float,
    gamma: float,
    noise_excluding: int,
    q: int,
    threshold: int,
    root,
    node_mid,
    lower_child,
    upper_child,
    lower_cell,
    B: int,
    theta,
    alpha: float,
    ubar_val,
    ubar_ts,
    eta: float,
    enable_pasa: int,
    t0: int,
    state: int,
    action: int,
    quads,
):
    """Run n iterations of environment step + TD update + visit tracking.

    See the pure backend for the step-by-step contract; the partition is
    fixed for the whole chunk and one quad row is consumed per iteration.
    """
    cdef cnp.int64_t[:, ::1] skel = skeleton
    cdef double[:, ::1] rew = rewards
    cdef cnp.int64_t[::1] pref = preferred
    cdef cnp.int64_t[::1] root_v = root
    cdef cnp.int64_t[::1] mid_v = node_mid
    cdef cnp.int64_t[::1] lch = lower_child
    cdef cnp.int64_t[::1] uch = upper_child
    cdef cnp.int64_t[::1] lcell = lower_cell
    cdef double[:, ::1] th = theta
    cdef double[::1] uval = ubar_val
    cdef cnp.int64_t[::1] uts = ubar_ts
    cdef double[:, ::1] qd = quads
    cdef Py_ssize_t n = qd.shape[0]
    cdef long S_c = S, A_c = A, B_c = B, q_c = q, thr = threshold
    cdef double delta_c = delta, dpi = delta_pi, gamma_c = gamma
    cdef double alpha_c = alpha, eta_c = eta
    cdef double one_minus_eta = 1.0 - eta_c
    cdef int excl = noise_excluding, pasa = enable_pasa
    cdef long s = state, a = action
    cdef long t0_c = t0, qp1 = q_c + 1, r_cells = thr // qp1
    cdef Py_ssize_t i
    cdef long t, s2, a2, p2, j, b1, b2, c1, c2, node, child, leaf, idx, dt
    cdef double u0, u1, u2, u3, rwd, v, target, old
    for i in range(n):
        t = t0_c + i
        u0 = qd[i, 0]
        u1 = qd[i, 1]
        u2 = qd[i, 2]
        u3 = qd[i, 3]
        rwd = rew[s, a]
        # transition
        if u0 < delta_c:
            if excl:
                s2 = <long>(u1 * (S_c - 1))
                if s2 >= S_c - 1:
                    s2 = S_c - 2
                if s2 >= s:
                    s2 += 1
            else:
                s2 = <long>(u1 * S_c)
                if s2 >= S_c:
                    s2 = S_c - 1
        else:
            s2 = skel[s, a]
        # next action
        p2 = pref[s2]
        if A_c > 1 and u2 < dpi:
            j = <long>(u3 * (A_c - 1))
            if j >= A_c - 1:
                j = A_c - 2
            a2 = j + 1 if j >= p2 else j
        else:
            a2 = p2
        # cell of s2 (plain walk)
        b2 = s2 // qp1 if s2 < thr else (s2 - thr) // q_c + r_cells
        node = root_v[b2]
        if node < 0:
            c2 = b2
        else:
            while True:
                if s2 >= mid_v[node]:
                    child = uch[node]
                    leaf = B_c + node
                else:
                    child = lch[node]
                    leaf = lcell[node]
                if child < 0:
                    c2 = leaf
                    break
                node = child
        # cell of s, updating visit frequencies along the created-cell path
        b1 = s // qp1 if s < thr else (s - thr) // q_c + r_cells
        if pasa:
            dt = t - uts[b1]
            v = uval[b1] * pow(one_minus_eta, <double>dt)
            uval[b1] = v + eta_c * (1.0 - v)
            uts[b1] = t + 1
        node = root_v[b1]
        if node < 0:
            c1 = b1
        else:
            while True:
                if s >= mid_v[node]:
                    if pasa:
                        idx = B_c + node
                        dt = t - uts[idx]
                        v = uval[idx] * pow(one_minus_eta, <double>dt)
                        uval[idx] = v + eta_c * (1.0 - v)
                        uts[idx] = t + 1
                    child = uch[node]
                    leaf = B_c + node
                else:
                    child = lch[node]
                    leaf = lcell[node]
                if child < 0:
                    c1 = leaf
                    break
                node = child
        # SARSA(0)
        target = rwd + gamma_c * th[c2, a2]
        old = th[c1, a]
        th[c1, a] = old + alpha_c * (target - old)
        s = s2
        a = a2
    return s, a
