"""External clustering metrics: accuracy under best matching, NMI, ARI, empty clusters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .align import linear_assignment
from .errors import DataError


@dataclass
class ClusterReport:
    acc: float | None
    nmi: float | None
    ari: float | None
    empty_clusters: int
    n_samples: int
    hard_labels: list[int] = field(repr=False)

    def to_dict(self, include_labels: bool = False) -> dict:
        d = asdict(self)
        if not include_labels:
            d.pop("hard_labels")
        return d


def contingency(true_labels, pred_labels) -> np.ndarray:
    t = np.asarray(true_labels)
    p = np.asarray(pred_labels)
    if t.ndim != 1 or t.shape != p.shape:
        raise DataError(f"label sequences differ in shape: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise DataError("label sequences are empty")
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def accuracy(true_labels, pred_labels) -> float:
    table = contingency(true_labels, pred_labels)
    rows, cols = linear_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """Mutual information normalized by the geometric mean of the two entropies (0 if either is 0)."""
    table = contingency(true_labels, pred_labels).astype(np.float64)
    n = table.sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    nz = table > 0
    pij = table[nz] / n
    mi = float((pij * np.log(pij * n * n / np.outer(a, b)[nz])).sum())
    h = np.sqrt(_entropy(a) * _entropy(b))
    if h == 0.0:
        return 0.0
    return float(min(max(mi / h, 0.0), 1.0))


def _pairs(counts) -> int:
    return sum(int(c) * (int(c) - 1) // 2 for c in np.ravel(counts))


def ari(true_labels, pred_labels) -> float:
    """Adjusted Rand index from exact integer pair counts, divided once at the end."""
    table = contingency(true_labels, pred_labels)
    sum_ij = _pairs(table)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    total = _pairs([table.sum()])
    # (index - expected) / (max - expected), both scaled by 2 * total
    num = 2 * (sum_ij * total - sum_a * sum_b)
    den = (sum_a + sum_b) * total - 2 * sum_a * sum_b
    if den == 0:
        # both partitions trivial (all-in-one or all singletons, or N = 1)
        return 1.0
    return num / den


def empty_cluster_count(hard_labels, k: int) -> int:
    labels = np.asarray(hard_labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    return int(k - np.unique(labels).size)


def cluster_report(hard_labels, k: int, true_labels=None) -> ClusterReport:
    labels = np.asarray(hard_labels, dtype=np.int64)
    acc = nmi_ = ari_ = None
    if true_labels is not None:
        acc = accuracy(true_labels, labels)
        nmi_ = nmi(true_labels, labels)
        ari_ = ari(true_labels, labels)
    return ClusterReport(acc, nmi_, ari_, empty_cluster_count(labels, k), int(labels.size), labels.tolist())
