"""Detection-to-track association: negative-GIoU costs and gated linear assignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import FrameMismatchError, OrientedBox3, giou3d


@dataclass(frozen=True, eq=False)
class CostMatrix:
    costs: np.ndarray
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        if c.ndim != 2:
            c = c.reshape(len(self.row_ids), len(self.col_ids))
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix entries must be finite")
        rows = list(self.row_ids) if self.row_ids else list(range(c.shape[0]))
        cols = list(self.col_ids) if self.col_ids else list(range(c.shape[1]))
        if c.shape != (len(rows), len(cols)):
            raise ValueError(f"cost shape {c.shape} does not match ids ({len(rows)}, {len(cols)})")
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "row_ids", rows)
        object.__setattr__(self, "col_ids", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.costs.shape


@dataclass
class Assignment:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)

    def total_cost(self, costs) -> float:
        """Sum of ``costs[i, j]`` over positional matches, in row order."""
        costs = np.asarray(costs)
        return float(sum(costs[i, j] for i, j in sorted(self.matches)))


def linear_assignment(costs) -> list[tuple[int, int]]:
    """Minimum-cost assignment of a rectangular matrix (Munkres / Hungarian).

    Returns ``min(M, N)`` (row, column) pairs sorted by row. Uses the
    shortest-augmenting-path form with row/column potentials, O(n^2 m).
    """
    c = np.asarray(costs, dtype=float)
    if c.size == 0:
        return []
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape
    a = c.tolist()
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)      # p[j]: row (1-based) assigned to column j, 0 = free
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    pairs = [(p[j] - 1, j - 1) for j in range(1, m + 1) if p[j]]
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return sorted(pairs)


def build_cost_matrix(detections: list[OrientedBox3], tracks: list[OrientedBox3],
                      row_ids=None, col_ids=None) -> CostMatrix:
    """Cost ``1 - GIoU`` for every detection/track pair (range ``[0, 2]``)."""
    for b in (*detections, *tracks):
        if b.frame != "world":
            raise FrameMismatchError("association expects world-frame boxes")
    costs = np.empty((len(detections), len(tracks)))
    for m, d in enumerate(detections):
        for n, t in enumerate(tracks):
            costs[m, n] = 1.0 - giou3d(d, t)
    return CostMatrix(
        costs,
        list(row_ids) if row_ids is not None else list(range(len(detections))),
        list(col_ids) if col_ids is not None else list(range(len(tracks))),
    )


def solve(c: CostMatrix, gate: float, pregate: bool = False) -> Assignment:
    """Optimal assignment, then drop pairs whose cost exceeds ``gate``.

    With ``pregate`` the over-gate entries are first replaced by a prohibitive
    cost so the solver routes around them instead of discarding them afterwards.
    Indices in the result are the matrix's ``row_ids`` / ``col_ids``.
    """
    if not gate > 0:
        raise ValueError("gate must be positive")
    costs = c.costs
    if pregate and costs.size:
        big = max(float(np.abs(costs).max()), gate) * 10.0 + 1.0
        costs = np.where(costs > gate, big, costs)
    pairs = linear_assignment(costs)
    matches = [(i, j) for i, j in pairs if c.costs[i, j] <= gate]
    used_r = {i for i, _ in matches}
    used_c = {j for _, j in matches}
    return Assignment(
        matches=[(c.row_ids[i], c.col_ids[j]) for i, j in matches],
        unmatched_detections=[r for i, r in enumerate(c.row_ids) if i not in used_r],
        unmatched_tracks=[t for j, t in enumerate(c.col_ids) if j not in used_c],
    )
