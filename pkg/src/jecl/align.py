"""Matching image clusters to text clusters with a confusion matrix and the Hungarian method."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class ClusterCorrespondence:
    """``mapping[n]`` is the image cluster matched to text cluster ``n``."""

    mapping: np.ndarray
    cost: float

    def __post_init__(self) -> None:
        m = np.asarray(self.mapping, dtype=np.int64)
        if sorted(m.tolist()) != list(range(m.size)):
            raise DataError(f"mapping {m.tolist()} is not a permutation")
        object.__setattr__(self, "mapping", m)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.mapping == np.arange(self.mapping.size)))

    def apply_to_text(self, text_rows: np.ndarray) -> np.ndarray:
        """Reorder text centroids (rows) so that text cluster ``n`` lands at index ``mapping[n]``."""
        out = np.empty_like(np.asarray(text_rows))
        out[self.mapping] = text_rows
        return out

    def apply_to_columns(self, r: np.ndarray) -> np.ndarray:
        return self.apply_to_text(np.asarray(r).T).T


def confusion_matrix(img_labels, txt_labels, k: int) -> np.ndarray:
    a = np.asarray(img_labels, dtype=np.int64)
    b = np.asarray(txt_labels, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"label sequences differ in shape: {a.shape} vs {b.shape}")
    for name, lab in (("image", a), ("text", b)):
        bad = np.flatnonzero((lab < 0) | (lab >= k))
        if bad.size:
            raise DataError(f"{name} label {lab[bad[0]]} at position {bad[0]} outside [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (a, b), 1)
    return cm


def _hungarian_core(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path with potentials; returns (row->col, u, v)."""
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.int64)
    assignment[p[1:] - 1] = np.arange(n)
    return assignment, u[1:], v[1:]


def _lex_smallest(tight: np.ndarray, match: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching in the tight-edge graph, starting from ``match``."""
    n = match.size
    match = match.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    adj = [np.flatnonzero(tight[i]) for i in range(n)]
    for i in range(n):
        for j in adj[i]:
            if fixed[j]:
                continue
            if j == match[i]:
                break
            # force i -> j: owner of j must reach i's old column by an alternating path
            start, target = owner[j], match[i]
            prev = {}
            seen = np.zeros(n, dtype=bool)
            seen[j] = True
            queue = deque([start])
            end = -1
            while queue and end < 0:
                x = queue.popleft()
                for c in adj[x]:
                    if fixed[c] or seen[c] or c == match[x]:
                        continue
                    seen[c] = True
                    prev[c] = x
                    if c == target:
                        end = c
                        break
                    queue.append(owner[c])
            if end < 0:
                continue
            c = end
            while True:
                x = prev[c]
                nxt = match[x]
                match[x], owner[c] = c, x
                if x == start:
                    break
                c = nxt
            match[i], owner[j] = j, i
            break
        fixed[match[i]] = True
    return match


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment of a square matrix.

    Returns ``(perm, total)`` with ``perm[i]`` the column given to row ``i``. Among equally
    optimal assignments the lexicographically smallest ``perm`` is returned.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DataError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise DataError("cost matrix contains non-finite entries")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    shift = c.min()
    work = c - shift
    perm, u, v = _hungarian_core(work)
    reduced = work - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(work).max())) * n
    perm = _lex_smallest(reduced <= tol, perm)
    return perm, float(c[np.arange(n), perm].sum())


def linear_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular minimum-cost matching; returns matched ``(rows, cols)`` index arrays."""
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise DataError(f"cost matrix must be 2-D, got shape {c.shape}")
    n_rows, n_cols = c.shape
    size = max(n_rows, n_cols)
    square = np.zeros((size, size))
    square[:n_rows, :n_cols] = c
    perm, _ = hungarian(square)
    rows = np.arange(n_rows)
    cols = perm[:n_rows]
    keep = cols < n_cols
    return rows[keep], cols[keep]


def align_views(q: np.ndarray, r: np.ndarray) -> ClusterCorrespondence:
    """Match text clusters to image clusters by maximizing the agreement of hard labels."""
    q = np.asarray(q)
    r = np.asarray(r)
    if q.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ConfigurationError(f"q {q.shape} and r {r.shape} disagree on the number of clusters")
    k = q.shape[1]
    cm = confusion_matrix(q.argmax(axis=1), r.argmax(axis=1), k)
    # rows = text clusters so the tie-break is lexicographic in the text->image mapping
    cost = (cm.max() - cm).T
    mapping, total = hungarian(cost)
    return ClusterCorrespondence(mapping, total)
