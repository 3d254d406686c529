"""Minimum-cost approaching-path search over the detection grid.

The cost of a step arriving at node v is (k_j + P_D(v)) / (k_j + 1) times
the step length, so low-detection nodes are cheap and k_j dials how much
plain distance matters.  A* with the zero-detection straight-line heuristic
finds the cheapest 26-connected grid path from the challenger start to the
ego position.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoPathError, PathValidationError
from .grid import DetectionGrid


@dataclass(frozen=True)
class CostWeights:
    """Weighting factor k_j > 0 trading path shortness against low detection."""

    k_j: float

    def __post_init__(self):
        if self.k_j <= 0.0:
            raise ConfigError(f"k_j must be > 0, got {self.k_j}")


def node_cost(p_d: float, dist: float, weights: CostWeights) -> float:
    """Cost of one step of length dist arriving at detection probability p_d."""
    return (weights.k_j + p_d) / (weights.k_j + 1.0) * dist


def heuristic(node: Sequence[float], goal: Sequence[float], weights: CostWeights) -> float:
    """Admissible remaining-cost estimate.

    Straight-line cost assuming zero detection probability on the rest of
    the path: k_j / (k_j + 1) times the Euclidean distance.  Never
    overestimates, since every step costs at least that factor times its
    length and no path is shorter than the straight line.
    """
    d = math.dist(tuple(node), tuple(goal))
    return weights.k_j / (weights.k_j + 1.0) * d


@dataclass
class ApproachPath:
    """A* result: node sequence from challenger start to ego position.

    indices: (N, 3) grid indices; positions: (N, 3) m; p_d: per-node
    detection probability; cost: summed step costs; length: geometric
    length in m.
    """

    indices: np.ndarray
    positions: np.ndarray
    p_d: np.ndarray
    cost: float
    length: float

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def mean_p_d(self) -> float:
        """Length-weighted mean detection probability along the path."""
        seg = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        total = float(seg.sum())
        if total == 0.0:
            return float(self.p_d[0])
        return float(np.sum(self.p_d[1:] * seg) / total)


def path_cost(path: ApproachPath, grid: DetectionGrid, weights: CostWeights) -> float:
    """Total cost of a path: sum of node_cost over steps 2..N.

    Validates that consecutive nodes are 26-neighborhood grid neighbors.
    """
    idx = np.asarray(path.indices, dtype=int)
    pos = np.asarray(path.positions, dtype=float)
    total = 0.0
    for j in range(1, len(idx)):
        step = idx[j] - idx[j - 1]
        if np.all(step == 0) or np.any(np.abs(step) > 1):
            raise PathValidationError(
                f"nodes {j - 1} and {j} are not grid neighbors: {tuple(idx[j - 1])} -> {tuple(idx[j])}"
            )
        dist = math.dist(tuple(pos[j - 1]), tuple(pos[j]))
        total += node_cost(grid.value_at(idx[j]), dist, weights)
    return total


# 26-neighborhood: all index offsets with each component in {-1, 0, 1}
# except the null step, in lexicographic order for deterministic expansion.
_NEIGHBOR_OFFSETS = [
    (di, dj, dk)
    for di in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
]


def find_path(
    grid: DetectionGrid,
    mask: np.ndarray | None,
    start: Sequence[int],
    goal: Sequence[int],
    weights: CostWeights,
) -> ApproachPath:
    """Cheapest valid grid path from start to goal (node index triples).

    mask marks searchable nodes (None = all nodes valid).  The result
    minimizes the summed step cost; ties resolve deterministically by
    preferring deeper nodes (larger g), then lower flat node index.
    Raises NoPathError when the goal cannot be reached through valid nodes.
    """
    nx, ny, nz = grid.shape
    start = tuple(int(c) for c in start)
    goal = tuple(int(c) for c in goal)
    for name, node in (("start", start), ("goal", goal)):
        if not (0 <= node[0] < nx and 0 <= node[1] < ny and 0 <= node[2] < nz):
            raise NoPathError(f"{name} node {node} outside grid of shape {(nx, ny, nz)}")
        if mask is not None and not mask[node]:
            raise NoPathError(f"{name} node {node} is masked invalid (outside the search space)")
    if start == goal:
        raise ConfigError("start and goal must differ")

    kj = weights.k_j
    k1 = kj + 1.0
    k_factor = kj / k1
    sx, sy, sz = grid.spec.dx, grid.spec.dy, grid.spec.dz

    # flat index layout: ((i * ny) + j) * nz + k
    neighbors = [
        (di, dj, dk, (di * ny + dj) * nz + dk, math.sqrt((di * sx) ** 2 + (dj * sy) ** 2 + (dk * sz) ** 2))
        for di, dj, dk in _NEIGHBOR_OFFSETS
    ]

    values = grid.values.ravel().tolist()
    valid = (np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)).ravel().tolist()
    n = nx * ny * nz
    g = [math.inf] * n
    parent = [-1] * n

    gi, gj, gk = goal
    goal_flat = (gi * ny + gj) * nz + gk
    si, sj, sk = start
    start_flat = (si * ny + sj) * nz + sk

    def h_of(i: int, j: int, k: int) -> float:
        return k_factor * math.sqrt(((i - gi) * sx) ** 2 + ((j - gj) * sy) ** 2 + ((k - gk) * sz) ** 2)

    g[start_flat] = 0.0
    heap = [(h_of(si, sj, sk), -0.0, start_flat, si, sj, sk)]
    heappush, heappop = heapq.heappush, heapq.heappop

    found = False
    while heap:
        f, neg_g, flat, i, j, k = heappop(heap)
        gv = -neg_g
        if gv > g[flat]:
            continue  # stale entry, node was reached cheaper meanwhile
        if flat == goal_flat:
            found = True
            break
        for di, dj, dk, doff, dlen in neighbors:
            ni = i + di
            nj = j + dj
            nk = k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            nflat = flat + doff
            if not valid[nflat]:
                continue
            ng = gv + (kj + values[nflat]) / k1 * dlen
            if ng < g[nflat]:
                g[nflat] = ng
                parent[nflat] = flat
                heappush(heap, (ng + h_of(ni, nj, nk), -ng, nflat, ni, nj, nk))

    if not found:
        raise NoPathError(f"no valid path from {start} to {goal}")

    flat_chain = [goal_flat]
    while flat_chain[-1] != start_flat:
        flat_chain.append(parent[flat_chain[-1]])
    flat_chain.reverse()

    indices = np.empty((len(flat_chain), 3), dtype=int)
    for row, flat in enumerate(flat_chain):
        i, rem = divmod(flat, ny * nz)
        j, k = divmod(rem, nz)
        indices[row] = (i, j, k)
    s = grid.spec
    positions = np.column_stack(
        (
            s.x_min + indices[:, 0] * s.dx,
            s.y_min + indices[:, 1] * s.dy,
            s.z_min + indices[:, 2] * s.dz,
        )
    )
    p_d = grid.values[indices[:, 0], indices[:, 1], indices[:, 2]]
    length = float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum())
    return ApproachPath(
        indices=indices,
        positions=positions,
        p_d=np.asarray(p_d, dtype=float),
        cost=g[goal_flat],
        length=length,
    )
