"""Soft assignments, the joint target distribution, the regularized loss and its gradients.

Conventions shared by every function here:

* ``q`` is the image-view soft assignment, ``r`` the text-view one, both ``(N, k)``.
* ``text_present`` is a boolean vector of length ``N``; ``None`` means every text is present.
  Rows of ``r`` (and of the text embeddings) for absent texts are ignored entirely.
* ``p`` is treated as a constant by :func:`loss_gradients`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, JeclError

EPS = 1e-12
LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    gamma: float = 0.1
    beta: float = 0.1
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.gamma < 0 or self.beta < 0:
            raise ConfigurationError(f"gamma and beta must be >= 0, got {self.gamma}, {self.beta}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    cluster: float
    align: float
    reg_img: float
    reg_txt: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _present(text_present, n: int) -> np.ndarray:
    if text_present is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(text_present, dtype=bool)
    if mask.shape != (n,):
        raise ConfigurationError(f"text_present has shape {mask.shape}, expected ({n},)")
    return mask


def _centroids(centroids) -> np.ndarray:
    return np.asarray(getattr(centroids, "centroids", centroids), dtype=np.float64)


def _sq_distances(z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    d = (z * z).sum(1)[:, None] - 2.0 * z @ mu.T + (mu * mu).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def soft_assign(z: np.ndarray, centroids, alpha: float = 1.0) -> np.ndarray:
    """Student-t kernel similarity of each row of ``z`` to each centroid, normalized per row."""
    z = np.asarray(z, dtype=np.float64)
    mu = _centroids(centroids)
    if z.ndim != 2 or mu.ndim != 2 or z.shape[1] != mu.shape[1]:
        raise ConfigurationError(f"embedding shape {z.shape} incompatible with centroids {mu.shape}")
    d = _sq_distances(z, mu)
    return _softmax_rows(-(alpha + 1.0) / 2.0 * np.log1p(d / alpha))


def sharpen(q: np.ndarray, freq: np.ndarray) -> np.ndarray:
    weight = q * q / freq
    return weight / weight.sum(axis=1, keepdims=True)


def target_distribution(q: np.ndarray, r: np.ndarray | None, lam: float, text_present=None) -> np.ndarray:
    """Blend of the frequency-normalized, squared assignments of both views.

    Rows whose text is absent keep only the ``lam``-weighted image term, so they sum to ``lam``.
    """
    q = np.asarray(q, dtype=np.float64)
    present = _present(text_present, q.shape[0])
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise JeclError(f"image cluster frequency is zero for clusters {np.flatnonzero(f <= 0)}")
    p = lam * sharpen(q, f)
    if r is not None and present.any():
        r = np.asarray(r, dtype=np.float64)
        if r.shape != q.shape:
            raise ConfigurationError(f"q {q.shape} and r {r.shape} differ in shape")
        rp = r[present]
        g = rp.sum(axis=0)
        if np.any(g <= 0):
            raise JeclError(f"text cluster frequency is zero for clusters {np.flatnonzero(g <= 0)}")
        p[present] += (1.0 - lam) * sharpen(rp, g)
    return p


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise generalized KL: sum p log(p/q) - p + q (plain KL when both rows sum to 1)."""
    safe_p = np.maximum(p, EPS)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(np.maximum(q, EPS))), 0.0)
    return terms.sum(axis=1) - p.sum(axis=1) + q.sum(axis=1)


def cluster_loss(p: np.ndarray, q: np.ndarray, r: np.ndarray | None, text_present=None) -> float:
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    present = _present(text_present, n)
    total = _kl_rows(p, q).sum()
    if r is not None and present.any():
        total += _kl_rows(p[present], np.asarray(r)[present]).sum()
    return float(total / n)


def _jsd_rows(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    s = 0.5 * (q + r)
    ls = np.log(np.maximum(s, EPS))
    kq = (q * (np.log(np.maximum(q, EPS)) - ls)).sum(axis=1)
    kr = (r * (np.log(np.maximum(r, EPS)) - ls)).sum(axis=1)
    return 0.5 * kq + 0.5 * kr


def align_loss(q: np.ndarray, r: np.ndarray | None, text_present=None) -> float:
    """Mean Jensen-Shannon divergence between paired rows, over pairs with text."""
    q = np.asarray(q, dtype=np.float64)
    present = _present(text_present, q.shape[0])
    if r is None or not present.any():
        return 0.0
    jsd = _jsd_rows(q[present], np.asarray(r, dtype=np.float64)[present])
    return float(np.clip(jsd.mean(), 0.0, LOG2))


def _kl_to_uniform(freq: np.ndarray) -> float:
    k = freq.shape[0]
    f = np.maximum(freq, EPS)
    return float(max((freq * np.log(f * k)).sum(), 0.0))


def balance_reg(q: np.ndarray, r: np.ndarray | None, text_present=None) -> tuple[float, float]:
    """KL from each view's mean cluster frequency to the uniform distribution."""
    q = np.asarray(q, dtype=np.float64)
    present = _present(text_present, q.shape[0])
    reg_img = _kl_to_uniform(q.mean(axis=0))
    reg_txt = 0.0
    if r is not None and present.any():
        reg_txt = _kl_to_uniform(np.asarray(r, dtype=np.float64)[present].mean(axis=0))
    return reg_img, reg_txt


def total_loss(q, r, p, cfg: LossConfig, text_present=None) -> LossBreakdown:
    c = cluster_loss(p, q, r, text_present)
    a = align_loss(q, r, text_present)
    ri, rt = balance_reg(q, r, text_present)
    return LossBreakdown(c, a, ri, rt, c + cfg.gamma * a + cfg.beta * (ri + rt))


@dataclass
class LossGradients:
    z_img: np.ndarray
    z_txt: np.ndarray | None
    mu_img: np.ndarray
    mu_txt: np.ndarray | None
    loss: LossBreakdown


def _softmax_backward(prob: np.ndarray, grad_prob: np.ndarray) -> np.ndarray:
    return prob * (grad_prob - (grad_prob * prob).sum(axis=1, keepdims=True))


def _kernel_backward(z, mu, d, grad_logits, alpha):
    # logits = -(alpha+1)/2 * log(1 + d/alpha), d = |z - mu|^2
    dd = grad_logits * (-(alpha + 1.0) / (2.0 * (alpha + d)))
    dz = 2.0 * (dd.sum(axis=1, keepdims=True) * z - dd @ mu)
    dmu = -2.0 * (dd.T @ z - dd.sum(axis=0)[:, None] * mu)
    return dz, dmu


def loss_gradients(
    z_img: np.ndarray,
    z_txt: np.ndarray | None,
    mu_img,
    mu_txt,
    p: np.ndarray,
    cfg: LossConfig,
    text_present=None,
) -> LossGradients:
    """Gradients of the total loss w.r.t. embeddings and centroids of both views, ``p`` held fixed.

    Pass ``z_txt=None`` for an image-only problem; text terms then vanish.
    """
    z_img = np.asarray(z_img, dtype=np.float64)
    mu_img = _centroids(mu_img)
    p = np.asarray(p, dtype=np.float64)
    n = z_img.shape[0]
    present = _present(text_present, n)
    if z_txt is None:
        present = np.zeros(n, dtype=bool)
    n_txt = int(present.sum())
    a = cfg.alpha

    d_img = _sq_distances(z_img, mu_img)
    q = _softmax_rows(-(a + 1.0) / 2.0 * np.log1p(d_img / a))
    r = None
    if n_txt:
        z_txt = np.asarray(z_txt, dtype=np.float64)
        mu_txt = _centroids(mu_txt)
        d_txt = _sq_distances(z_txt, mu_txt)
        r = _softmax_rows(-(a + 1.0) / 2.0 * np.log1p(d_txt / a))

    # KL(p||q) w.r.t. logits of q reduces to (q * rowsum(p) - p) / N
    g_logit_q = (q * p.sum(axis=1, keepdims=True) - p) / n
    m = q.mean(axis=0)
    g_q = np.broadcast_to(cfg.beta * (np.log(np.maximum(m, EPS) * m.shape[0]) + 1.0) / n, q.shape).copy()

    g_logit_r = None
    if n_txt:
        g_logit_r = np.zeros_like(r)
        g_r = np.zeros_like(r)
        rp, qp, pp = r[present], q[present], p[present]
        g_logit_r[present] = (rp * pp.sum(axis=1, keepdims=True) - pp) / n
        ls = np.log(np.maximum(0.5 * (qp + rp), EPS))
        g_q[present] += cfg.gamma * 0.5 * (np.log(np.maximum(qp, EPS)) - ls) / n_txt
        g_r[present] += cfg.gamma * 0.5 * (np.log(np.maximum(rp, EPS)) - ls) / n_txt
        nf = rp.mean(axis=0)
        g_r[present] += cfg.beta * (np.log(np.maximum(nf, EPS) * nf.shape[0]) + 1.0) / n_txt
        g_logit_r += _softmax_backward(r, g_r)
    g_logit_q += _softmax_backward(q, g_q)

    dz_img, dmu_img = _kernel_backward(z_img, mu_img, d_img, g_logit_q, a)
    dz_txt = dmu_txt = None
    if n_txt:
        dz_txt, dmu_txt = _kernel_backward(z_txt, mu_txt, d_txt, g_logit_r, a)
        dz_txt[~present] = 0.0
    elif z_txt is not None:
        dz_txt = np.zeros_like(np.asarray(z_txt, dtype=np.float64))
        dmu_txt = np.zeros_like(_centroids(mu_txt)) if mu_txt is not None else None

    breakdown = total_loss(q, r, p, cfg, present if r is not None else None)
    return LossGradients(dz_img, dz_txt, dmu_img, dmu_txt, breakdown)
