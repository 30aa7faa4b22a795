"""Reference implementations used only by the tests (plain numpy, no numba)."""

from __future__ import annotations

import itertools

import numpy as np


def forward_grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def tv(u: np.ndarray) -> float:
    gx, gy = forward_grad(np.asarray(u, dtype=np.float64))
    return float(np.sum(np.sqrt(gx**2 + gy**2)))


def tvl1_energy(u, f, lam) -> float:
    return tv(u) + lam * float(np.sum(np.abs(np.asarray(u, float) - np.asarray(f, float))))


def potts_energy_labels(labels: np.ndarray, costs: np.ndarray, lam: float) -> float:
    k = costs.shape[0]
    per = sum(0.5 * tv((labels == c).astype(float)) for c in range(k))
    data = sum(float(costs[c][labels == c].sum()) for c in range(k))
    return per + lam * data


def brute_force_potts(costs: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    k, h, w = costs.shape
    best, best_lab = np.inf, None
    for combo in itertools.product(range(k), repeat=h * w):
        lab = np.array(combo).reshape(h, w)
        e = potts_energy_labels(lab, costs, lam)
        if e < best:
            best, best_lab = e, lab
    return best, best_lab


def tree_diameter_bruteforce(coords: list[tuple[int, int]]) -> float:
    """All-pairs Dijkstra on the 8-neighbour pixel graph (tiny inputs only)."""
    import heapq

    nodes = {c: i for i, c in enumerate(coords)}
    best = 0.0
    for src in coords:
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, (r, c) = heapq.heappop(heap)
            if d > dist[(r, c)]:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    nb = (r + dr, c + dc)
                    if (dr or dc) and nb in nodes:
                        nd = d + (np.sqrt(2.0) if dr and dc else 1.0)
                        if nd < dist.get(nb, np.inf):
                            dist[nb] = nd
                            heapq.heappush(heap, (nd, nb))
        best = max(best, max(dist.values()))
    return best


def random_tree_skeleton(rng: np.random.Generator, n: int, size: int = 40) -> np.ndarray:
    """Grow a pixel set whose 8-neighbour graph is a tree.

    A candidate pixel is added only if it touches exactly one pixel already in
    the set, so every addition contributes one edge and no cycle can form.
    """
    mask = np.zeros((size, size), dtype=bool)
    mask[size // 2, size // 2] = True
    offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    count, attempts = 1, 0
    while count < n and attempts < 50 * n:
        attempts += 1
        rows, cols = np.nonzero(mask)
        k = rng.integers(rows.size)
        dr, dc = offsets[rng.integers(8)]
        r, c = rows[k] + dr, cols[k] + dc
        if not (1 <= r < size - 1 and 1 <= c < size - 1) or mask[r, c]:
            continue
        if mask[r - 1 : r + 2, c - 1 : c + 2].sum() != 1:
            continue
        mask[r, c] = True
        count += 1
    return mask
