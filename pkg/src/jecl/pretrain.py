"""Stacked denoising autoencoder pretraining of one view's encoder, plus encoder checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .numerics import IDENTITY, RELU, LinearLayer, Stack, as_matrix, init_layer, make_optimizer

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"JECLENC\x00"
CHECKPOINT_VERSION = 1
_ACT_CODES = {RELU: 0, IDENTITY: 1}


@dataclass(frozen=True)
class SdaeConfig:
    layer_dims: tuple[int, ...]
    corruption_rate: float = 0.2
    layerwise_epochs: int = 50
    finetune_epochs: int = 100
    seed: int = 0
    batch_size: int = 256
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.9

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigurationError(f"layer_dims needs >= 2 entries, all >= 1; got {dims}")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ConfigurationError(f"corruption_rate must be in [0, 1), got {self.corruption_rate}")
        if self.layerwise_epochs < 0 or self.finetune_epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")

    @classmethod
    def default(cls, input_dim: int, embedding_dim: int = 10, hidden=(500, 500, 2000), **kw) -> "SdaeConfig":
        return cls((input_dim, *hidden, embedding_dim), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


@dataclass
class SdaeResult:
    encoder: Stack
    decoder: Stack
    layerwise_losses: list[list[float]] = field(default_factory=list)
    finetune_losses: list[float] = field(default_factory=list)
    mse_init: float = float("nan")
    mse_before_finetune: float = float("nan")
    mse_final: float = float("nan")


def corrupt(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Masking noise: zero each entry independently with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"corruption rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if rate == 0.0:
        return x.copy()
    return x * (rng.random(x.shape) >= rate)


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    enc, dec, train = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(enc), np.random.default_rng(dec), np.random.default_rng(train)


def init_autoencoder(cfg: SdaeConfig) -> tuple[list[LinearLayer], list[LinearLayer]]:
    """Fresh encoder layers (ReLU hidden, identity embedding) and their mirrored decoder layers.

    ``decoders[l]`` maps layer ``l``'s output back to its input; only ``decoders[0]`` (which
    reconstructs the raw features) is linear.
    """
    dims = cfg.layer_dims
    enc_rng, dec_rng, _ = _rngs(cfg.seed)
    n = len(dims) - 1
    encoders = [init_layer(dims[l], dims[l + 1], IDENTITY if l == n - 1 else RELU, enc_rng) for l in range(n)]
    decoders = [init_layer(dims[l + 1], dims[l], IDENTITY if l == 0 else RELU, dec_rng) for l in range(n)]
    return encoders, decoders


def init_encoder(cfg: SdaeConfig) -> Stack:
    return Stack(init_autoencoder(cfg)[0])


def reconstruction_mse(net: Stack, x: np.ndarray) -> float:
    return float(np.mean((net.predict(x) - x) ** 2))


def _fit(net: Stack, x: np.ndarray, epochs: int, cfg: SdaeConfig, rng: np.random.Generator) -> list[float]:
    """Minibatch descent on mean-square reconstruction error of corrupted inputs."""
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.momentum)
    params = net.parameters()
    n = x.shape[0]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = x[order[start : start + cfg.batch_size]]
            out = net.forward(corrupt(batch, cfg.corruption_rate, rng))
            diff = out - batch
            total += float((diff * diff).sum())
            grads, _ = net.backward(2.0 * diff / diff.size)
            opt.step(params, grads)
        losses.append(total / x.size)
    return losses


def train_sdae(x: np.ndarray, cfg: SdaeConfig) -> SdaeResult:
    """Greedy layer-wise denoising autoencoder training followed by end-to-end fine-tuning."""
    x = as_matrix(x, "features")
    if x.shape[1] != cfg.layer_dims[0]:
        raise ConfigurationError(f"features have {x.shape[1]} columns, layer_dims[0] = {cfg.layer_dims[0]}")
    encoders, decoders = init_autoencoder(cfg)
    _, _, rng = _rngs(cfg.seed)
    full = Stack(encoders + decoders[::-1])
    result = SdaeResult(Stack(encoders), Stack(decoders[::-1]))
    result.mse_init = reconstruction_mse(full, x)

    if cfg.layerwise_epochs > 0:
        h = x
        for l, (enc, dec) in enumerate(zip(encoders, decoders)):
            losses = _fit(Stack([enc, dec]), h, cfg.layerwise_epochs, cfg, rng)
            result.layerwise_losses.append(losses)
            log.debug("layer %d pretrained, final loss %.6g", l, losses[-1])
            h = Stack([enc]).predict(h)
    result.mse_before_finetune = reconstruction_mse(full, x)

    result.finetune_losses = _fit(full, x, cfg.finetune_epochs, cfg, rng)
    result.mse_final = reconstruction_mse(full, x)
    log.info(
        "autoencoder %s: reconstruction MSE %.5g -> %.5g",
        "-".join(map(str, cfg.layer_dims)),
        result.mse_init,
        result.mse_final,
    )
    return result


def pretrain_view(x: np.ndarray, cfg: SdaeConfig) -> Stack:
    """Pretrained encoder for one view; the decoder is dropped."""
    return train_sdae(x, cfg).encoder


def embed(encoder: Stack, x: np.ndarray) -> np.ndarray:
    return encoder.predict(x)


def save_encoder(path: str | Path, encoder: Stack, metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta]
    parts.append(struct.pack("<I", len(encoder.layers)))
    for layer in encoder.layers:
        parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODES[layer.activation]))
        parts.append(layer.weight.astype("<f8").tobytes())
        parts.append(layer.bias.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_encoder(path: str | Path) -> tuple[Stack, dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an encoder checkpoint (bad magic)")
    if len(buf) < 16:
        raise DataError(f"{path}: truncated checkpoint header")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        off = 16
        meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (n_layers,) = struct.unpack_from("<I", buf, off)
        off += 4
        codes = {v: k for k, v in _ACT_CODES.items()}
        layers = []
        for _ in range(n_layers):
            d_in, d_out, act = struct.unpack_from("<IIB", buf, off)
            off += 9
            w = np.frombuffer(buf, "<f8", d_in * d_out, off).reshape(d_out, d_in)
            off += 8 * d_in * d_out
            b = np.frombuffer(buf, "<f8", d_out, off)
            off += 8 * d_out
            layers.append(LinearLayer(w.astype(np.float64), b.astype(np.float64), codes[act]))
    except (struct.error, ValueError, KeyError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes after checkpoint")
    return Stack(layers), meta
