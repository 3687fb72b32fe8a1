"""Alternating optimization of encoders and centroids against a periodically refreshed target.

:func:`train` is the clustering phase proper. :func:`fit` runs the whole pipeline (scale inputs,
pretrain both autoencoders, k-means, align text clusters, train) and :func:`run_single_view`
turns the same machinery into a one-view DEC baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .align import align_views
from .data import PairedDataset
from .errors import ConfigurationError, TrainingError
from .kmeans import IMAGE, TEXT, CentroidSet, kmeans
from .metrics import ClusterReport, accuracy, ari, cluster_report, nmi
from .numerics import Stack, make_optimizer
from .objective import LossBreakdown, LossConfig, loss_gradients, soft_assign, target_distribution, total_loss
from .pretrain import SdaeConfig, pretrain_view

log = logging.getLogger(__name__)

Progress = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    k: int
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 256
    update_interval: int | None = None  # batches between target refreshes; None = one epoch
    tolerance: float = 0.001
    max_epochs: int = 100
    seed: int = 0
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.tolerance < 1.0:
            raise ConfigurationError(f"tolerance must be in (0, 1), got {self.tolerance}")
        if self.update_interval is not None and self.update_interval < 1:
            raise ConfigurationError("update_interval must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and max_epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = 0
    last_hard_labels: np.ndarray | None = None
    loss_trace: list[LossBreakdown] = field(default_factory=list)
    # loss under the previous target at the end of each interval (before the refresh)
    interval_end_trace: list[LossBreakdown] = field(default_factory=list)
    label_change_trace: list[float] = field(default_factory=list)
    alignment_drift: int = 0
    converged: bool = False


@dataclass
class TrainResult:
    image_encoder: Stack
    text_encoder: Stack | None
    image_centroids: CentroidSet
    text_centroids: CentroidSet | None
    target: np.ndarray
    state: TrainState

    @property
    def labels(self) -> np.ndarray:
        return final_assignment(self.target)


def final_assignment(p: np.ndarray) -> np.ndarray:
    """Most probable cluster per row (lowest index on ties)."""
    return np.asarray(p).argmax(axis=1)


class _Model:
    """Mutable working copy of encoders and centroids for one training run."""

    def __init__(self, enc_img, enc_txt, mu_img, mu_txt):
        self.enc_img = enc_img.copy()
        self.enc_txt = enc_txt.copy() if enc_txt is not None else None
        self.mu_img = np.array(getattr(mu_img, "centroids", mu_img), dtype=np.float64)
        self.mu_txt = None if mu_txt is None else np.array(getattr(mu_txt, "centroids", mu_txt), dtype=np.float64)

    @property
    def has_text(self) -> bool:
        return self.enc_txt is not None

    def parameters(self) -> list[np.ndarray]:
        params = self.enc_img.parameters() + [self.mu_img]
        if self.has_text:
            params += self.enc_txt.parameters() + [self.mu_txt]
        return params

    def assignments(self, ds: PairedDataset, alpha: float):
        q = soft_assign(self.enc_img.predict(ds.image), self.mu_img, alpha)
        r = soft_assign(self.enc_txt.predict(ds.text), self.mu_txt, alpha) if self.has_text else None
        return q, r


def _present(ds: PairedDataset, model: _Model) -> np.ndarray:
    return ds.text_present if model.has_text else np.zeros(ds.n, dtype=bool)


def _validate(ds, enc_img, enc_txt, mu_img, mu_txt, cfg):
    if enc_img.in_dim != ds.image.shape[1]:
        raise ConfigurationError(f"image encoder expects {enc_img.in_dim} features, data has {ds.image.shape[1]}")
    k_img = np.shape(getattr(mu_img, "centroids", mu_img))[0]
    if k_img != cfg.k:
        raise ConfigurationError(f"{k_img} image centroids but k = {cfg.k}")
    if enc_txt is not None:
        if enc_txt.in_dim != ds.text.shape[1]:
            raise ConfigurationError(f"text encoder expects {enc_txt.in_dim} features, data has {ds.text.shape[1]}")
        if mu_txt is None or np.shape(getattr(mu_txt, "centroids", mu_txt))[0] != cfg.k:
            raise ConfigurationError(f"text view needs {cfg.k} centroids")


def train(
    ds: PairedDataset,
    image_encoder: Stack,
    text_encoder: Stack | None,
    image_centroids,
    text_centroids,
    cfg: TrainConfig,
    progress: Progress | None = None,
) -> TrainResult:
    """Alternate between refreshing the target from full-data assignments and descending the loss.

    ``text_encoder=None`` trains the image view alone (text terms vanish). Inputs are not
    modified. Stops once fewer than ``cfg.tolerance`` of the samples change their target label
    between refreshes, or after ``cfg.max_epochs`` epochs.
    """
    _validate(ds, image_encoder, text_encoder, image_centroids, text_centroids, cfg)
    model = _Model(image_encoder, text_encoder, image_centroids, text_centroids)
    present = _present(ds, model)
    lcfg = cfg.loss
    n = ds.n
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.momentum)
    params = model.parameters()
    interval = cfg.update_interval or math.ceil(n / cfg.batch_size)
    state = TrainState()
    p = None

    def refresh() -> np.ndarray:
        q, r = model.assignments(ds, lcfg.alpha)
        if p is not None:
            state.interval_end_trace.append(total_loss(q, r, p, lcfg, present))
        new_p = target_distribution(q, r, lcfg.lam, present)
        loss = total_loss(q, r, new_p, lcfg, present)
        if not math.isfinite(loss.total):
            raise TrainingError(f"non-finite loss at refresh {len(state.loss_trace)}: {loss}")
        state.loss_trace.append(loss)
        labels = final_assignment(new_p)
        change = None
        if state.last_hard_labels is not None:
            change = float(np.mean(labels != state.last_hard_labels))
            state.label_change_trace.append(change)
            state.converged = change < cfg.tolerance
        state.last_hard_labels = labels
        if r is not None and present.any():
            corr = align_views(q[present], r[present])
            if not corr.is_identity:
                state.alignment_drift += 1
                log.info("refresh %d: optimal cluster alignment drifted to %s", len(state.loss_trace) - 1, corr.mapping.tolist())
        if progress is not None:
            rec = {"refresh": len(state.loss_trace) - 1, "epoch": state.epoch, "loss": loss.to_dict(), "label_change": change}
            if ds.labels is not None:
                rec["metrics"] = {"acc": accuracy(ds.labels, labels), "nmi": nmi(ds.labels, labels), "ari": ari(ds.labels, labels)}
            progress(rec)
        return new_p

    def step(idx: np.ndarray) -> None:
        z_img = model.enc_img.forward(ds.image[idx])
        z_txt = model.enc_txt.forward(ds.text[idx]) if model.has_text else None
        g = loss_gradients(z_img, z_txt, model.mu_img, model.mu_txt, p[idx], lcfg, present[idx] if model.has_text else None)
        if not math.isfinite(g.loss.total):
            raise TrainingError(
                f"non-finite loss {g.loss} in epoch {state.epoch} on batch of {idx.size} samples "
                f"(indices {idx[:20].tolist()}{'...' if idx.size > 20 else ''}); "
                f"|z_img| max {np.abs(z_img).max():.3g}"
            )
        grads, _ = model.enc_img.backward(g.z_img)
        grads = grads + [g.mu_img]
        if model.has_text:
            grads_t, _ = model.enc_txt.backward(g.z_txt)
            grads += grads_t + [g.mu_txt]
        opt.step(params, grads)

    p = refresh()
    batches = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if batches and batches % interval == 0:
                p = refresh()
                if state.converged:
                    break
            step(order[start : start + cfg.batch_size])
            batches += 1
        if state.converged:
            break
        state.epoch = epoch + 1
    if cfg.max_epochs > 0 and not state.converged:
        p = refresh()

    mu_txt = None if not model.has_text else CentroidSet(model.mu_txt, TEXT)
    return TrainResult(model.enc_img, model.enc_txt, CentroidSet(model.mu_img, IMAGE), mu_txt, p, state)


def embedding_gradient_norms(
    ds: PairedDataset,
    image_encoder: Stack,
    text_encoder: Stack | None,
    image_centroids,
    text_centroids,
    loss: LossConfig,
) -> np.ndarray:
    """Per-sample norm of the loss gradient w.r.t. each image embedding, on the full dataset."""
    model = _Model(image_encoder, text_encoder, image_centroids, text_centroids)
    present = _present(ds, model)
    q, r = model.assignments(ds, loss.alpha)
    p = target_distribution(q, r, loss.lam, present)
    z_txt = model.enc_txt.predict(ds.text) if model.has_text else None
    g = loss_gradients(model.enc_img.predict(ds.image), z_txt, model.mu_img, model.mu_txt, p, loss, present if model.has_text else None)
    return np.linalg.norm(g.z_img, axis=1)


# ---------------------------------------------------------------------------
# whole pipeline


@dataclass(frozen=True)
class JeclConfig:
    train: TrainConfig
    embedding_dim: int = 10
    hidden_dims: tuple[int, ...] = (500, 500, 2000)
    corruption_rate: float = 0.2
    layerwise_epochs: int = 50
    finetune_epochs: int = 100
    pretrain_batch_size: int = 256
    pretrain_optimizer: str = "sgd"
    pretrain_learning_rate: float = 0.01
    kmeans_restarts: int = 20
    kmeans_max_iter: int = 300
    scale_inputs: bool = True

    def sdae(self, input_dim: int, seed: int) -> SdaeConfig:
        return SdaeConfig(
            (input_dim, *self.hidden_dims, self.embedding_dim),
            corruption_rate=self.corruption_rate,
            layerwise_epochs=self.layerwise_epochs,
            finetune_epochs=self.finetune_epochs,
            seed=seed,
            batch_size=self.pretrain_batch_size,
            optimizer=self.pretrain_optimizer,
            learning_rate=self.pretrain_learning_rate,
        )

    def with_seed(self, seed: int) -> "JeclConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def with_loss(self, **changes) -> "JeclConfig":
        return replace(self, train=replace(self.train, loss=replace(self.train.loss, **changes)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class Initialization:
    """Pretrained encoders and aligned initial centroids, reusable across clustering runs."""

    image_encoder: Stack
    text_encoder: Stack | None
    image_centroids: CentroidSet
    text_centroids: CentroidSet | None
    image_scale: float = 1.0
    text_scale: float = 1.0
    pretrained: bool = True


@dataclass
class FitResult:
    report: ClusterReport
    init: Initialization
    result: TrainResult
    image_embedding: np.ndarray
    text_embedding: np.ndarray | None


def _scale(x: np.ndarray) -> float:
    s = float(np.std(x)) if x.size else 0.0
    return 1.0 / s if s > 0 else 1.0


def _seeds(seed: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(4)]


def scaled(ds: PairedDataset, init: Initialization) -> PairedDataset:
    return PairedDataset(ds.image * init.image_scale, ds.text * init.text_scale, ds.text_present, ds.labels)


def input_scales(ds: PairedDataset, cfg: JeclConfig, use_text: bool = True) -> tuple[float, float]:
    """Scalar multipliers bringing each view to unit global standard deviation."""
    if not cfg.scale_inputs:
        return 1.0, 1.0
    use_text = use_text and bool(ds.text_present.any())
    return _scale(ds.image), _scale(ds.text[ds.text_present]) if use_text else 1.0


def pretrain_encoders(
    ds: PairedDataset,
    cfg: JeclConfig,
    use_text: bool = True,
    image_encoder: Stack | None = None,
    text_encoder: Stack | None = None,
) -> tuple[Stack, Stack | None]:
    """Pretrain whichever view encoders are not supplied (text on present rows only)."""
    s_img, s_txt, _, _ = _seeds(cfg.train.seed)
    use_text = use_text and bool(ds.text_present.any())
    image_scale, text_scale = input_scales(ds, cfg, use_text)
    if image_encoder is None:
        x = ds.image * image_scale
        image_encoder = pretrain_view(x, cfg.sdae(x.shape[1], s_img))
    if not use_text:
        return image_encoder, None
    if text_encoder is None:
        t = ds.text[ds.text_present] * text_scale
        text_encoder = pretrain_view(t, cfg.sdae(t.shape[1], s_txt))
    return image_encoder, text_encoder


def initialize(
    ds: PairedDataset,
    cfg: JeclConfig,
    use_text: bool = True,
    image_encoder: Stack | None = None,
    text_encoder: Stack | None = None,
) -> Initialization:
    """Pretrain (unless encoders are supplied), run k-means per view and align the text clusters."""
    k = cfg.train.k
    _, _, km_img, km_txt = _seeds(cfg.train.seed)
    use_text = use_text and bool(ds.text_present.any())
    present = ds.text_present
    image_scale, text_scale = input_scales(ds, cfg, use_text)
    pretrained = image_encoder is None or (use_text and text_encoder is None)
    image_encoder, text_encoder = pretrain_encoders(ds, cfg, use_text, image_encoder, text_encoder)
    z_img = image_encoder.predict(ds.image * image_scale)
    mu_img, _ = kmeans(z_img, k, cfg.kmeans_restarts, cfg.kmeans_max_iter, km_img, IMAGE)
    if not use_text:
        return Initialization(image_encoder, None, mu_img, None, image_scale, 1.0, pretrained)

    z_txt = text_encoder.predict(ds.text[present] * text_scale)
    mu_txt, _ = kmeans(z_txt, k, cfg.kmeans_restarts, cfg.kmeans_max_iter, km_txt, TEXT)
    alpha = cfg.train.loss.alpha
    corr = align_views(soft_assign(z_img[present], mu_img, alpha), soft_assign(z_txt, mu_txt, alpha))
    log.info("initial text->image cluster mapping %s", corr.mapping.tolist())
    mu_txt = CentroidSet(corr.apply_to_text(mu_txt.centroids), TEXT, mu_txt.inertia)
    return Initialization(image_encoder, text_encoder, mu_img, mu_txt, image_scale, text_scale, pretrained)


def cluster(
    ds: PairedDataset,
    cfg: JeclConfig,
    init: Initialization,
    progress: Progress | None = None,
) -> FitResult:
    """Clustering phase from a given initialization; reports metrics if ``ds`` has labels."""
    sds = scaled(ds, init)
    res = train(sds, init.image_encoder, init.text_encoder, init.image_centroids, init.text_centroids, cfg.train, progress)
    report = cluster_report(res.labels, cfg.train.k, ds.labels)
    z_txt = res.text_encoder.predict(sds.text) if res.text_encoder is not None else None
    return FitResult(report, init, res, res.image_encoder.predict(sds.image), z_txt)


def fit(ds: PairedDataset, cfg: JeclConfig, progress: Progress | None = None, **encoders) -> FitResult:
    """Full two-view pipeline: initialize, then cluster."""
    return cluster(ds, cfg, initialize(ds, cfg, True, **encoders), progress)


def run_single_view(
    ds: PairedDataset,
    view: str,
    cfg: JeclConfig,
    progress: Progress | None = None,
    encoder: Stack | None = None,
) -> FitResult:
    """DEC baseline on one view: lambda = 1, gamma = 0, beta = 0, the other view ignored.

    The text view clusters only samples whose text is present.
    """
    if view not in (IMAGE, TEXT):
        raise ConfigurationError(f"view must be {IMAGE!r} or {TEXT!r}, got {view!r}")
    if view == TEXT:
        if not ds.text_present.any():
            raise ConfigurationError("text view selected but every text is missing")
        keep = ds.text_present
        labels = None if ds.labels is None else ds.labels[keep]
        ds = PairedDataset(ds.text[keep], ds.text[keep], np.ones(int(keep.sum()), dtype=bool), labels)
    single = cfg.with_loss(lam=1.0, gamma=0.0, beta=0.0)
    return cluster(ds, single, initialize(ds, single, use_text=False, image_encoder=encoder), progress)
