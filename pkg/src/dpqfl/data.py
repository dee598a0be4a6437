"""Dataset ingestion: IDX files, image downscaling, CSV corpora, synthetic blobs."""
from __future__ import annotations

import csv
import gzip
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import (
    BadMagicError,
    CountMismatchError,
    MultiChannelUnsupportedError,
    TruncatedFileError,
)

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
TARGET_SIDE = 16
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X {X.shape} and y {y.shape} do not describe the same examples")
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("feature values must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: missing IDX header")
    magic = int.from_bytes(raw[:4], "big")
    if expected_magic is not None and magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise BadMagicError(f"{path}: unsupported IDX magic 0x{magic:08x} (only unsigned bytes)")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header declares {ndim} dimensions but file ends early")
    dims = tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    size = int(np.prod(dims)) if dims else 0
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 arrays can be written as IDX")
    header = bytes([0, 0, 0x08, array.ndim]) + b"".join(d.to_bytes(4, "big") for d in array.shape)
    with open(path, "wb") as f:
        f.write(header + np.ascontiguousarray(array).tobytes())


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(n, rows, cols)`` and labels ``(n,)`` as uint8 arrays."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _to_unit(image) -> np.ndarray:
    image = np.asarray(image)
    if np.issubdtype(image.dtype, np.integer):
        return image.astype(float) / 255.0
    return image.astype(float)


def to_grayscale(image) -> np.ndarray:
    """Luma-weighted grey level in [0, 1] for an ``(h, w, 3)`` image."""
    image = _to_unit(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got shape {image.shape}")
    return np.clip(image @ LUMA, 0.0, 1.0)


def resize_bilinear(image, size: int = TARGET_SIDE) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D array to ``size x size``.

    Output corners coincide with input corners, and every output value is a
    convex combination of input values.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise MultiChannelUnsupportedError(f"expected a single-channel image, got shape {image.shape}")
    rows = _interp_axis(image, size, axis=0)
    return _interp_axis(rows, size, axis=1)


def _interp_axis(a, size, axis):
    n = a.shape[axis]
    if n == size:
        return a
    pos = np.linspace(0.0, n - 1, size)
    lo = np.minimum(np.floor(pos).astype(int), n - 2) if n > 1 else np.zeros(size, dtype=int)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    shape = [1, 1]
    shape[axis] = size
    w = w.reshape(shape)
    return np.take(a, lo, axis=axis) * (1 - w) + np.take(a, hi, axis=axis) * w


def resize_to_16(image) -> np.ndarray:
    """Scale a grey image to [0, 1] (integer input is divided by 255) and
    resample it to 16x16."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise MultiChannelUnsupportedError("convert to grayscale before resizing")
    return np.clip(resize_bilinear(_to_unit(image), TARGET_SIDE), 0.0, 1.0)


def prepare_images(images, labels, num_classes: int = 10) -> Dataset:
    """Grayscale (if RGB), resize to 16x16, flatten to 256 features.

    All-black images cannot be amplitude encoded and are dropped.
    """
    images = np.asarray(images)
    feats = []
    for img in images:
        if img.ndim == 3:
            img = to_grayscale(img)
        feats.append(resize_to_16(img).reshape(-1))
    X = np.array(feats).reshape(len(feats), TARGET_SIDE * TARGET_SIDE)
    keep = np.linalg.norm(X, axis=1) >= 1e-12
    if not keep.all():
        logger.warning("dropped %d all-black images", int((~keep).sum()))
    return Dataset(X[keep], np.asarray(labels, dtype=int)[keep], num_classes)


class ImageDownscaler(TransformerMixin, BaseEstimator):
    """Flattened square images -> flattened ``side x side`` bilinear thumbnails.

    Integer pixel input is scaled by 1/255. Stateless; ``fit`` only records
    the input width.
    """

    def __init__(self, side=TARGET_SIDE):
        self.side = side

    def fit(self, X, y=None):
        X = check_array(X)
        src = int(round(np.sqrt(X.shape[1])))
        if src * src != X.shape[1]:
            raise ValueError(f"{X.shape[1]} features is not a square image")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        raw = np.asarray(X)
        X = check_array(X, dtype=None)
        src = int(round(np.sqrt(X.shape[1])))
        unit = _to_unit(raw) if np.issubdtype(raw.dtype, np.integer) else X.astype(float)
        out = [resize_bilinear(row.reshape(src, src), self.side).reshape(-1) for row in unit]
        return np.clip(np.array(out), 0.0, 1.0)


# ---------------------------------------------------------------------------
# CSV and synthetic corpora
# ---------------------------------------------------------------------------

def write_csv_dataset(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(dataset.feature_dim)])
        for x, label in zip(dataset.X, dataset.y):
            w.writerow([int(label)] + [repr(float(v)) for v in x])


def read_csv_dataset(path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: expected a header starting with 'label'")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r])
    y = body[:, 0].astype(int)
    return Dataset(body[:, 1:], y, num_classes or int(y.max()) + 1)


def make_synthetic(num_classes: int, per_class: int, feature_dim: int, separation: float, seed=None,
                   noise_std: float = 0.1, offset: float = 0.3) -> Dataset:
    """Gaussian blobs in [0, 1]^feature_dim.

    Class ``c`` is centred on ``offset + separation * noise_std * e_c``, so
    ``separation`` is measured in units of the within-class spread. Samples are
    clipped to [0, 1] and interleaved by class.
    """
    if feature_dim < num_classes:
        raise ValueError("feature_dim must be >= num_classes for orthogonal class means")
    rng = np.random.default_rng(seed)
    X = np.empty((num_classes * per_class, feature_dim))
    y = np.tile(np.arange(num_classes), per_class)
    means = offset + separation * noise_std * np.eye(num_classes, feature_dim)
    X[:] = means[y] + noise_std * rng.standard_normal(X.shape)
    return Dataset(np.clip(X, 0.0, 1.0), y, num_classes)
