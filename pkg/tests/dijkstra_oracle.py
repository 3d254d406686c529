"""Exhaustive shortest-path oracles, independent of the library search.

Plain lazy-heap Dijkstra over the 26-connected lattice, run to the fixed
point (entries are re-pushed on any strict improvement), with the same
arrival-node cost convention as the search under test:
(k + p[arrival]) / (k + 1) * step_length.
"""

import heapq
import math

import numpy as np

OFFSETS = [
    (di, dj, dk)
    for di in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
]


def dijkstra_cost(values, mask, start, goal, k_j, spacing):
    """Cheapest cost from start to goal; math.inf when unreachable."""
    dist = dijkstra_from(values, mask, start, k_j, spacing)
    return dist[goal]


def dijkstra_from(values, mask, source, k_j, spacing):
    """Cheapest arrival-cost from source to every node (full relaxation)."""
    values = np.asarray(values)
    nx, ny, nz = values.shape
    dx, dy, dz = spacing
    dist = np.full(values.shape, math.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        i, j, k = node
        for di, dj, dk in OFFSETS:
            ni, nj, nk = i + di, j + dj, k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            if mask is not None and not mask[ni, nj, nk]:
                continue
            dlen = math.sqrt((di * dx) ** 2 + (dj * dy) ** 2 + (dk * dz) ** 2)
            nd = d + (k_j + values[ni, nj, nk]) / (k_j + 1.0) * dlen
            if nd < dist[ni, nj, nk]:
                dist[ni, nj, nk] = nd
                heapq.heappush(heap, (nd, (ni, nj, nk)))
    return dist


def remaining_costs_to_goal(values, mask, goal, k_j, spacing):
    """True remaining cost from every node to the goal.

    Reverse sweep with departure-node costs: traversing the reverse edge
    u -> v accrues the original cost of v -> u, which is priced by u.
    """
    values = np.asarray(values)
    nx, ny, nz = values.shape
    dx, dy, dz = spacing
    dist = np.full(values.shape, math.inf)
    dist[goal] = 0.0
    heap = [(0.0, goal)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        i, j, k = node
        for di, dj, dk in OFFSETS:
            ni, nj, nk = i + di, j + dj, k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            if mask is not None and not mask[ni, nj, nk]:
                continue
            dlen = math.sqrt((di * dx) ** 2 + (dj * dy) ** 2 + (dk * dz) ** 2)
            nd = d + (k_j + values[i, j, k]) / (k_j + 1.0) * dlen
            if nd < dist[ni, nj, nk]:
                dist[ni, nj, nk] = nd
                heapq.heappush(heap, (nd, (ni, nj, nk)))
    return dist


def random_instance(rng):
    """Random small grid instance: values, mask, start, goal, k_j, spacing."""
    shape = (
        int(rng.integers(3, 13)),
        int(rng.integers(3, 13)),
        int(rng.integers(2, 5)),
    )
    values = rng.random(shape)
    spacing = tuple(float(s) for s in rng.uniform(0.4, 3.0, size=3))
    if rng.random() < 0.5:
        mask = rng.random(shape) > 0.1
    else:
        mask = np.ones(shape, dtype=bool)
    flat_valid = np.flatnonzero(mask.ravel())
    picks = rng.choice(flat_valid, size=2, replace=False)
    start = tuple(int(c) for c in np.unravel_index(picks[0], shape))
    goal = tuple(int(c) for c in np.unravel_index(picks[1], shape))
    k_j = float(rng.uniform(0.1, 1.0))
    return values, mask, start, goal, k_j, spacing
