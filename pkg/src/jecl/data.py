"""Paired two-view datasets: validation, file formats and a synthetic generator.

Text feature files::

    # optional comment lines (configuration header)
    N D
    x11 x12 ... x1D
    ...

Binary feature files start with ``JECLFEAT``, then ``<u32 version><u32 meta_len>``, a JSON
metadata blob, ``<u64 N><u64 D>`` and ``N*D`` little-endian float64 values in row-major order.
Label files hold one integer per line, mask files one 0/1 per line; ``#`` lines are skipped.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

FEATURE_MAGIC = b"JECLFEAT"
FEATURE_VERSION = 1


@dataclass
class PairedDataset:
    image: np.ndarray
    text: np.ndarray
    text_present: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float64)
        self.text = np.array(self.text, dtype=np.float64)
        if self.image.ndim != 2 or self.text.ndim != 2:
            raise DataError("feature matrices must be 2-D")
        n = self.image.shape[0]
        if self.text.shape[0] != n:
            raise DataError(f"image view has {n} rows but text view has {self.text.shape[0]}")
        if self.text_present is None:
            self.text_present = np.ones(n, dtype=bool)
        self.text_present = np.asarray(self.text_present, dtype=bool)
        if self.text_present.shape != (n,):
            raise DataError(f"mask has {self.text_present.size} entries, expected {n}")
        for name, m in (("image", self.image), ("text", self.text)):
            bad = np.argwhere(~np.isfinite(m))
            if bad.size:
                raise DataError(f"{name} features contain a non-finite value at row {bad[0][0]}")
        self.text[~self.text_present] = 0.0
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError(f"{self.labels.size} labels for {n} samples")

    @property
    def n(self) -> int:
        return self.image.shape[0]

    @property
    def n_classes(self) -> int | None:
        return None if self.labels is None else int(np.unique(self.labels).size)

    def subset(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        return PairedDataset(
            self.image[idx],
            self.text[idx],
            self.text_present[idx],
            None if self.labels is None else self.labels[idx],
        )

    def with_missing_text(self, rate: float, rng: np.random.Generator) -> "PairedDataset":
        """Drop the text of a further ``round(rate * N)`` randomly chosen samples."""
        if not 0.0 <= rate <= 1.0:
            raise ConfigurationError(f"missing rate must be in [0, 1], got {rate}")
        present = self.text_present.copy()
        drop = rng.choice(self.n, size=int(round(rate * self.n)), replace=False)
        present[drop] = False
        return PairedDataset(self.image, self.text, present, self.labels)


def _comment_lines(header: dict | None) -> list[str]:
    if not header:
        return []
    return ["# " + json.dumps(header, sort_keys=True)]


def _data_lines(path: Path) -> list[tuple[int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if s and not s.startswith("#"):
                out.append((lineno, s))
    return out


def save_features(path: str | Path, matrix: np.ndarray, header: dict | None = None, binary: bool = False) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    path = Path(path)
    if binary:
        meta = json.dumps(header or {}, sort_keys=True).encode("utf-8")
        path.write_bytes(
            FEATURE_MAGIC
            + struct.pack("<II", FEATURE_VERSION, len(meta))
            + meta
            + struct.pack("<QQ", *m.shape)
            + m.astype("<f8").tobytes()
        )
        return
    lines = _comment_lines(header) + [f"{m.shape[0]} {m.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in m]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == FEATURE_MAGIC:
        return _load_binary_features(path)
    lines = _data_lines(path)
    if not lines:
        raise DataError(f"{path}: empty feature file")
    lineno, head = lines[0]
    try:
        n, d = (int(t) for t in head.split())
    except ValueError:
        raise DataError(f"{path}: line {lineno}: malformed header {head!r}, expected 'N D'") from None
    rows = lines[1:]
    if len(rows) != n:
        raise DataError(f"{path}: header declares {n} rows but file has {len(rows)}")
    out = np.empty((n, d), dtype=np.float64)
    for i, (lineno, s) in enumerate(rows):
        parts = s.split()
        if len(parts) != d:
            raise DataError(f"{path}: row {i} (line {lineno}) has {len(parts)} values, expected {d}")
        try:
            out[i] = [float(t) for t in parts]
        except ValueError:
            raise DataError(f"{path}: row {i} (line {lineno}) is not numeric") from None
        if not np.all(np.isfinite(out[i])):
            raise DataError(f"{path}: row {i} (line {lineno}) contains NaN or Inf")
    return out


def _load_binary_features(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    try:
        version, meta_len = struct.unpack_from("<II", buf, 8)
    except struct.error:
        raise DataError(f"{path}: truncated binary header") from None
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: binary feature version {version}, expected {FEATURE_VERSION}")
    off = 16 + meta_len
    try:
        n, d = struct.unpack_from("<QQ", buf, off)
    except struct.error:
        raise DataError(f"{path}: truncated binary header") from None
    off += 16
    if len(buf) - off != 8 * n * d:
        raise DataError(f"{path}: expected {n}x{d} values, found {(len(buf) - off) // 8}")
    m = np.frombuffer(buf, "<f8", n * d, off).reshape(n, d).astype(np.float64)
    bad = np.argwhere(~np.isfinite(m))
    if bad.size:
        raise DataError(f"{path}: row {bad[0][0]} contains NaN or Inf")
    return m


def save_ints(path: str | Path, values, header: dict | None = None) -> None:
    lines = _comment_lines(header) + [str(int(v)) for v in np.asarray(values).ravel()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ints(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    out = []
    for lineno, s in _data_lines(path):
        try:
            out.append(int(s))
        except ValueError:
            raise DataError(f"{path}: line {lineno}: {s!r} is not an integer") from None
    return np.asarray(out, dtype=np.int64)


def load_mask(path: str | Path) -> np.ndarray:
    m = load_ints(path)
    bad = np.flatnonzero((m != 0) & (m != 1))
    if bad.size:
        raise DataError(f"{path}: entry {bad[0]} is {m[bad[0]]}, mask entries must be 0 or 1")
    return m.astype(bool)


def load_dataset(image_path, text_path, labels_path=None, mask_path=None) -> PairedDataset:
    image = load_features(image_path)
    text = load_features(text_path)
    if image.shape[0] != text.shape[0]:
        raise DataError(
            f"row-count mismatch: {image_path} has {image.shape[0]} rows, {text_path} has {text.shape[0]}"
        )
    n = image.shape[0]
    labels = mask = None
    if labels_path is not None:
        labels = load_ints(labels_path)
        if labels.size != n:
            raise DataError(f"{labels_path} has {labels.size} labels, expected {n}")
    if mask_path is not None:
        mask = load_mask(mask_path)
        if mask.size != n:
            raise DataError(f"{mask_path} has {mask.size} entries, expected {n}")
    return PairedDataset(image, text, mask, labels)


def save_dataset(directory: str | Path, ds: PairedDataset, header: dict | None = None, binary: bool = False) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "bin" if binary else "txt"
    paths = {
        "images": directory / f"images.{ext}",
        "texts": directory / f"texts.{ext}",
        "mask": directory / "mask.txt",
    }
    save_features(paths["images"], ds.image, header, binary)
    save_features(paths["texts"], ds.text, header, binary)
    save_ints(paths["mask"], ds.text_present.astype(int), header)
    if ds.labels is not None:
        paths["labels"] = directory / "labels.txt"
        save_ints(paths["labels"], ds.labels, header)
    return {k: str(v) for k, v in paths.items()}


def cluster_sizes(k: int, per_cluster_n: int, imbalance: float = 1.0) -> list[int]:
    """Geometric size profile from ``per_cluster_n`` down to ``per_cluster_n / imbalance``."""
    if k == 1:
        return [per_cluster_n]
    return [max(1, int(round(per_cluster_n * imbalance ** (-j / (k - 1))))) for j in range(k)]


def generate_synthetic(
    k: int = 5,
    per_cluster_n: int = 200,
    dims: tuple[int, int] = (50, 50),
    separation: float = 50.0,
    view_noise: float | tuple[float, float] = 1.0,
    missing_rate: float = 0.0,
    seed: int = 0,
    merge_image_pairs: int = 0,
    imbalance: float = 1.0,
) -> PairedDataset:
    """Gaussian blobs in two views that share only the cluster identity.

    Each view draws its own ``k`` centers at pairwise distance about ``separation``. With
    ``merge_image_pairs = m`` the image centers of classes (0, 1), (2, 3), ... (m pairs) coincide
    while their text centers stay apart.
    """
    if separation <= 0:
        raise ConfigurationError(f"separation must be positive, got {separation}")
    if k < 1 or per_cluster_n < 1:
        raise ConfigurationError("k and per_cluster_n must be >= 1")
    if 2 * merge_image_pairs > k:
        raise ConfigurationError(f"cannot merge {merge_image_pairs} pairs among {k} classes")
    if imbalance < 1.0:
        raise ConfigurationError(f"imbalance must be >= 1, got {imbalance}")
    if not 0.0 <= missing_rate <= 1.0:
        raise ConfigurationError(f"missing_rate must be in [0, 1], got {missing_rate}")
    noise = (view_noise, view_noise) if np.isscalar(view_noise) else tuple(view_noise)
    rng = np.random.default_rng(seed)

    def centers(d: int) -> np.ndarray:
        u = rng.normal(size=(k, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return u * separation / np.sqrt(2.0)

    c_img = centers(dims[0])
    c_txt = centers(dims[1])
    for m in range(merge_image_pairs):
        c_img[2 * m + 1] = c_img[2 * m]
    sizes = cluster_sizes(k, per_cluster_n, imbalance)
    labels = np.repeat(np.arange(k), sizes)
    n = labels.size
    image = c_img[labels] + noise[0] * rng.normal(size=(n, dims[0]))
    text = c_txt[labels] + noise[1] * rng.normal(size=(n, dims[1]))
    order = rng.permutation(n)
    image, text, labels = image[order], text[order], labels[order]
    present = np.ones(n, dtype=bool)
    present[rng.choice(n, size=int(round(missing_rate * n)), replace=False)] = False
    return PairedDataset(image, text, present, labels)
