"""Hierarchical interval partition of the state index range.

A base partition of B near-equal index intervals is refined by a split
vector rho of length X-B: entry k names the cell of partition k that is
split (as evenly as possible) to create partition k+1; the lower half keeps
the split cell's index, the upper half becomes cell B+k.  The whole
structure is a pure function of (S, B, rho) and is stored as a forest of
split nodes over the base cells, so mapping a state to its cell costs at
most ceil(log2(ceil(S/B))) + 1 hops and total storage is O(X log2 S).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np


def base_boundaries(S: int, B: int) -> np.ndarray:
    """Boundaries of the B base intervals (larger cells first), length B+1."""
    q, r = divmod(S, B)
    sizes = np.full(B, q, dtype=np.int64)
    sizes[:r] += 1
    bounds = np.zeros(B + 1, dtype=np.int64)
    np.cumsum(sizes, out=bounds[1:])
    return bounds


def base_cell_of(S: int, B: int, state: int) -> int:
    """O(1) base-cell lookup from the larger-cells-first layout."""
    q, r = divmod(S, B)
    threshold = r * (q + 1)
    if state < threshold:
        return state // (q + 1)
    return r + (state - threshold) // q


def split_point(lo: int, hi: int) -> int:
    """Even split of [lo, hi): the lower half keeps ceil(size/2) states."""
    return lo + (hi - lo + 1) // 2


class _Builder:
    """Replays a split sequence, maintaining live extents and tree wiring."""

    def __init__(self, S: int, B: int, X: int):
        self.S, self.B, self.X = S, B, X
        K = X - B
        bounds = base_boundaries(S, B)
        self.cur_lo = np.zeros(X, dtype=np.int64)
        self.cur_hi = np.zeros(X, dtype=np.int64)
        self.cur_lo[:B] = bounds[:-1]
        self.cur_hi[:B] = bounds[1:]
        self.root = np.full(B, -1, dtype=np.int64)
        self.node_lo = np.zeros(K, dtype=np.int64)
        self.node_mid = np.zeros(K, dtype=np.int64)
        self.node_hi = np.zeros(K, dtype=np.int64)
        self.lower_child = np.full(K, -1, dtype=np.int64)
        self.upper_child = np.full(K, -1, dtype=np.int64)
        # where the next split of each live cell hooks into the tree:
        # (0, b) root slot, (1, k) lower child of node k, (2, k) upper child
        self._slot = [(0, b) for b in range(B)] + [(-1, -1)] * K
        self.n_applied = 0

    def size(self, cell: int) -> int:
        return int(self.cur_hi[cell] - self.cur_lo[cell])

    def split(self, target: int):
        """Apply the next split to `target`, which must not be a singleton."""
        k = self.n_applied
        lo, hi = int(self.cur_lo[target]), int(self.cur_hi[target])
        if hi - lo < 2:
            raise ValueError(f"cannot split singleton cell {target} at level {k}")
        mid = split_point(lo, hi)
        self.node_lo[k], self.node_mid[k], self.node_hi[k] = lo, mid, hi
        kind, idx = self._slot[target]
        if kind == 0:
            self.root[idx] = k
        elif kind == 1:
            self.lower_child[idx] = k
        else:
            self.upper_child[idx] = k
        new = self.B + k
        self.cur_hi[target] = mid
        self.cur_lo[new], self.cur_hi[new] = mid, hi
        self._slot[target] = (1, k)
        self._slot[new] = (2, k)
        self.n_applied += 1

    def live_sigma(self) -> np.ndarray:
        """Singleton flags over all X slots; cells not yet created stay False."""
        live = self.B + self.n_applied
        sigma = np.zeros(self.X, dtype=bool)
        sigma[:live] = (self.cur_hi[:live] - self.cur_lo[:live]) <= 1
        return sigma


def initial_rho(S: int, B: int, X: int) -> np.ndarray:
    """Split vector from a uniform-visit prior: always halve the largest cell.

    Running the reselection sequence against cell masses proportional to cell
    sizes reduces to repeatedly splitting the largest non-singleton cell
    (lowest index on ties), which yields a near-uniform X-cell refinement.
    """
    q, r = divmod(S, B)
    sizes = [q + 1] * r + [q] * (B - r)
    heap = [(-m, c) for c, m in enumerate(sizes)]
    heapq.heapify(heap)
    rho = np.zeros(X - B, dtype=np.int64)
    for k in range(X - B):
        while True:
            neg, c = heapq.heappop(heap)
            if -neg == sizes[c]:
                break
        m = -neg
        if m < 2:
            raise ValueError("ran out of splittable cells; need X <= S")
        rho[k] = c
        lower = (m + 1) // 2
        sizes[c] = lower
        sizes.append(m - lower)
        heapq.heappush(heap, (-lower, c))
        heapq.heappush(heap, (-(m - lower), B + k))
    return rho


@dataclass(frozen=True)
class PartitionTree:
    """Materialized partition: final cell extents plus the walk structure.

    Built from (S, B, rho) only; rebuilding from the same inputs reproduces
    the identical structure.
    """

    S: int
    B: int
    X: int
    rho: np.ndarray
    root: np.ndarray
    node_lo: np.ndarray
    node_mid: np.ndarray
    node_hi: np.ndarray
    lower_child: np.ndarray
    upper_child: np.ndarray
    cell_lo: np.ndarray
    cell_hi: np.ndarray
    sigma: np.ndarray
    leaf_starts: np.ndarray = field(repr=False, default=None)
    leaf_cells: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, S: int, B: int, rho) -> "PartitionTree":
        rho = np.ascontiguousarray(rho, dtype=np.int64)
        X = B + rho.shape[0]
        if not 1 <= B <= X <= S:
            raise ValueError(f"need 1 <= B <= X <= S, got B={B}, X={X}, S={S}")
        builder = _Builder(S, B, X)
        for k, target in enumerate(rho.tolist()):
            if not 0 <= target < B + k:
                raise ValueError(f"rho[{k}] = {target} outside [0, {B + k})")
            builder.split(target)
        order = np.argsort(builder.cur_lo, kind="stable")
        return cls(
            S=S,
            B=B,
            X=X,
            rho=rho,
            root=builder.root,
            node_lo=builder.node_lo,
            node_mid=builder.node_mid,
            node_hi=builder.node_hi,
            lower_child=builder.lower_child,
            upper_child=builder.upper_child,
            cell_lo=builder.cur_lo,
            cell_hi=builder.cur_hi,
            sigma=(builder.cur_hi - builder.cur_lo) <= 1,
            leaf_starts=builder.cur_lo[order],
            leaf_cells=order.astype(np.int64),
        )

    def _check_state(self, state: int):
        if not 0 <= state < self.S:
            raise IndexError(f"state {state} out of range [0, {self.S})")

    def cell_of(self, state: int) -> int:
        """Leaf cell containing the state, via the split-forest walk."""
        return self.cell_of_with_hops(state)[0]

    def cell_of_with_hops(self, state: int) -> tuple[int, int]:
        """(cell, hop count); hops = base lookup + tree nodes visited."""
        self._check_state(state)
        b = base_cell_of(self.S, self.B, state)
        hops = 1
        node = int(self.root[b])
        if node < 0:
            return b, hops
        while True:
            hops += 1
            if state >= self.node_mid[node]:
                child = int(self.upper_child[node])
                leaf = self.B + node
            else:
                child = int(self.lower_child[node])
                leaf = int(self.rho[node])
            if child < 0:
                return leaf, hops
            node = child

    def cells_of(self, states: np.ndarray) -> np.ndarray:
        """Vectorized cell lookup by binary search over leaf boundaries."""
        states = np.asarray(states)
        if states.size and (states.min() < 0 or states.max() >= self.S):
            raise IndexError("state out of range")
        return self.leaf_cells[np.searchsorted(self.leaf_starts, states, side="right") - 1]

    def indicator_cells(self, state: int) -> np.ndarray:
        """Sparse indicator support: the base cell plus every cell whose
        creation-time extent contains the state."""
        self._check_state(state)
        b = base_cell_of(self.S, self.B, state)
        out = [b]
        node = int(self.root[b])
        while node >= 0:
            if state >= self.node_mid[node]:
                out.append(self.B + node)
                node = int(self.upper_child[node])
            else:
                node = int(self.lower_child[node])
        return np.asarray(out, dtype=np.int64)

    def members(self, cell: int) -> np.ndarray:
        """States of a final leaf cell."""
        if not 0 <= cell < self.X:
            raise IndexError(f"cell {cell} out of range [0, {self.X})")
        return np.arange(self.cell_lo[cell], self.cell_hi[cell], dtype=np.int64)

    def creation_extent(self, cell: int) -> tuple[int, int]:
        """Extent of the cell at the level it was created (base extent for
        cell < B); this is the region its visit indicator tracks."""
        if not 0 <= cell < self.X:
            raise IndexError(f"cell {cell} out of range [0, {self.X})")
        if cell < self.B:
            bounds = base_boundaries(self.S, self.B)
            return int(bounds[cell]), int(bounds[cell + 1])
        k = cell - self.B
        return int(self.node_mid[k]), int(self.node_hi[k])

    def level_extents(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) extents of the B+j cells of partition j (replayed)."""
        if not 0 <= j <= self.X - self.B:
            raise ValueError(f"level {j} out of range")
        builder = _Builder(self.S, self.B, self.B + j)
        for target in self.rho[:j].tolist():
            builder.split(target)
        live = self.B + j
        return builder.cur_lo[:live].copy(), builder.cur_hi[:live].copy()

    def storage_entry_count(self) -> int:
        """Number of stored scalar entries, for the space audit."""
        arrays = (
            self.rho,
            self.root,
            self.node_lo,
            self.node_mid,
            self.node_hi,
            self.lower_child,
            self.upper_child,
            self.cell_lo,
            self.cell_hi,
            self.sigma,
            self.leaf_starts,
            self.leaf_cells,
        )
        return int(sum(a.size for a in arrays))

    def to_dict(self) -> dict:
        """Serializable audit form: (S, B, X, rho, final leaf intervals)."""
        return {
            "S": self.S,
            "B": self.B,
            "X": self.X,
            "rho": [int(k) for k in self.rho],
            "leaves": [[int(lo), int(hi)] for lo, hi in zip(self.cell_lo, self.cell_hi)],
        }


def new_partition(S: int, B: int, X: int) -> PartitionTree:
    """Fresh tree with the uniform-prior initial split vector."""
    if not 1 <= B <= X <= S:
        raise ValueError(f"need 1 <= B <= X <= S, got B={B}, X={X}, S={S}")
    return PartitionTree.build(S, B, initial_rho(S, B, X))
