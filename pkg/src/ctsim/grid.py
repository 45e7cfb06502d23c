"""Fixed-radius pair search over points in the unit square.

Points are bucketed into a uniform grid whose cell side is the search
radius, so a pair within range can only straddle neighbouring cells.
Pairs come back as two index arrays ``(i, j)`` with ``i < j``, sorted
lexicographically, which makes the result directly comparable with the
brute-force search.
"""

from __future__ import annotations

import numpy as np

# Cell side gets a hair of slack so rounding in x / side never splits an
# in-range pair across non-adjacent cells.
_SLACK = 1.0 + 1e-9

# Half of the 3x3 neighbourhood; the other half is covered by symmetry.
_HALF_STENCIL = ((0, 0), (1, -1), (1, 0), (1, 1), (0, 1))


def _sorted_pairs(i: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    order = np.lexsort((hi, lo))
    return lo[order], hi[order]


def pairs_within(x: np.ndarray, y: np.ndarray, radius: float,
                 active: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs at Euclidean distance ``<= radius``.

    ``active`` optionally masks points out of the search entirely.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = np.arange(x.size) if active is None else np.flatnonzero(active)
    empty = np.empty(0, dtype=np.int64)
    if idx.size < 2 or radius <= 0:
        return empty, empty.copy()

    side = radius * _SLACK
    m = max(1, int(np.ceil(1.0 / side)))
    px = x[idx]
    py = y[idx]
    cx = np.clip((px / side).astype(np.int64), 0, m - 1)
    cy = np.clip((py / side).astype(np.int64), 0, m - 1)
    key = cx * m + cy

    order = np.argsort(key, kind="stable")
    counts = np.bincount(key, minlength=m * m)
    starts = np.cumsum(counts) - counts

    r2 = radius * radius
    out_i = []
    out_j = []
    for dx, dy in _HALF_STENCIL:
        nx = cx + dx
        ny = cy + dy
        ok = (nx >= 0) & (nx < m) & (ny >= 0) & (ny < m)
        src = np.flatnonzero(ok)
        nkey = nx[src] * m + ny[src]
        cnt = counts[nkey]
        total = int(cnt.sum())
        if total == 0:
            continue
        a = np.repeat(src, cnt)
        # offset of each candidate within its target cell
        first = np.repeat(np.cumsum(cnt) - cnt, cnt)
        within = np.arange(total) - first
        b = order[np.repeat(starts[nkey], cnt) + within]
        if dx == 0 and dy == 0:
            keep = b > a
            a = a[keep]
            b = b[keep]
        d2 = (px[a] - px[b]) ** 2 + (py[a] - py[b]) ** 2
        hit = d2 <= r2
        out_i.append(idx[a[hit]])
        out_j.append(idx[b[hit]])

    if not out_i:
        return empty, empty.copy()
    return _sorted_pairs(np.concatenate(out_i), np.concatenate(out_j))


def pairs_within_naive(x, y, radius: float, active=None) -> tuple[np.ndarray, np.ndarray]:
    """O(n^2) reference for :func:`pairs_within`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    mask = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    r2 = radius * radius
    out_i, out_j = [], []
    for a in range(n):
        if not mask[a]:
            continue
        for b in range(a + 1, n):
            if mask[b] and (x[a] - x[b]) ** 2 + (y[a] - y[b]) ** 2 <= r2:
                out_i.append(a)
                out_j.append(b)
    return np.array(out_i, dtype=np.int64), np.array(out_j, dtype=np.int64)
