"""Lloyd's k-means with k-means++ seeding, used to place the initial centroids of each view."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

IMAGE = "image"
TEXT = "text"


@dataclass
class CentroidSet:
    centroids: np.ndarray  # (k, E)
    view_tag: str = IMAGE
    inertia: float = float("nan")

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ConfigurationError(f"centroids must be a non-empty (k, E) matrix, got {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ConfigurationError("centroids contain non-finite values")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def copy(self) -> "CentroidSet":
        return CentroidSet(self.centroids.copy(), self.view_tag, self.inertia)


@dataclass
class LloydResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_trace: list[float] = field(default_factory=list)
    iterations: int = 0


def sq_distances(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (z * z).sum(1)[:, None] - 2.0 * z @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = z.shape[0]
    idx = [int(rng.integers(n))]
    closest = sq_distances(z, z[idx]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: take any point not yet chosen
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rest[rng.integers(rest.size)])
        else:
            nxt = int(rng.choice(n, p=closest / total))
        idx.append(nxt)
        closest = np.minimum(closest, sq_distances(z, z[[nxt]])[:, 0])
    return z[idx].copy()


def _assign(z: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = sq_distances(z, c)
    labels = d.argmin(axis=1)  # argmin picks the lowest index on ties
    return labels, d[np.arange(z.shape[0]), labels]


def lloyd(z: np.ndarray, init: np.ndarray, max_iter: int = 300) -> LloydResult:
    """Lloyd iterations from ``init`` until the assignment stops changing or ``max_iter``."""
    z = np.asarray(z, dtype=np.float64)
    c = np.asarray(init, dtype=np.float64).copy()
    k = c.shape[0]
    labels, dist = _assign(z, c)
    trace = [float(dist.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point worst served by its centroid
            far = int(np.where(counts[labels] > 1, dist, -1.0).argmax())
            c[j] = z[far]
            labels[far] = j
            dist[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, labels, z)
        c = sums / counts[:, None]
        new_labels, dist = _assign(z, c)
        trace.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return LloydResult(c, labels, trace[-1], trace, it)


def kmeans(
    z: np.ndarray,
    k: int,
    restarts: int = 20,
    max_iter: int = 300,
    seed: int = 0,
    view_tag: str = IMAGE,
) -> tuple[CentroidSet, np.ndarray]:
    """Best-inertia result over ``restarts`` k-means++ seeded Lloyd runs."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ConfigurationError(f"k-means input must be 2-D, got shape {z.shape}")
    n = z.shape[0]
    if k < 1 or k > n:
        raise ConfigurationError(f"k={k} must satisfy 1 <= k <= N={n}")
    if restarts < 1:
        raise ConfigurationError("restarts must be >= 1")
    best: LloydResult | None = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        res = lloyd(z, kmeans_pp(z, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return CentroidSet(best.centroids, view_tag, best.inertia), best.labels
