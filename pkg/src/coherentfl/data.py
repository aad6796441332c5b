"""Datasets: synthetic generators, federated partitioning and IDX ingestion."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError, IdxDimensionOverflowError, IdxMagicError, IdxParseError,
    IdxTrailingDataError, IdxTruncatedError,
)

IDX_UBYTE = 0x08
MAX_IDX_ELEMENTS = 2**31 - 1


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if len(self.features) < 1:
            raise ConfigurationError("dataset must contain at least one sample")
        if len(self.features) != len(self.labels):
            raise ConfigurationError("features and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ConfigurationError("labels outside [0, classes)")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.classes)


def synthetic_classification(n: int, p: int, classes: int, separation: float,
                             seed: int) -> Dataset:
    """Gaussian clusters with unit-variance noise around well-spread class centres.

    Centres are ``separation`` times orthonormal directions (random unit
    vectors when ``classes > p``), so ``separation`` is measured in noise
    standard deviations.
    """
    if not n >= classes >= 2:
        raise ConfigurationError("need n >= classes >= 2")
    rng = np.random.default_rng(seed)
    if classes <= p:
        q, _ = np.linalg.qr(rng.standard_normal((p, classes)))
        centres = q.T
    else:
        c = rng.standard_normal((classes, p))
        centres = c / np.linalg.norm(c, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % classes)
    x = separation * centres[labels] + rng.standard_normal((n, p))
    return Dataset(x, labels.astype(np.int64), classes)


def quadratic_points(n: int, centre, spread: float, rng) -> Dataset:
    """Samples ``v ~ N(centre, spread^2 I)`` for the quadratic model."""
    centre = np.asarray(centre, dtype=float)
    x = centre + spread * rng.standard_normal((n, centre.size))
    return Dataset(x, np.zeros(n, dtype=np.int64), 1)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_test = int(round(test_fraction * dataset.n))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def partition(dataset: Dataset, k: int, mode: str = "iid", shards_per_device: int = 2,
              seed: int = 0) -> list:
    """Split a dataset across ``k`` devices.

    ``iid`` deals a random permutation into near-equal parts.  ``label-shard``
    sorts by label, cuts ``k * shards_per_device`` contiguous shards and deals
    them at random, so each device sees only a few classes.
    """
    if k < 1:
        raise ConfigurationError("need at least one device")
    if dataset.n < k:
        raise ConfigurationError(f"{dataset.n} samples cannot cover {k} devices")
    rng = np.random.default_rng(seed)
    if mode == "iid":
        parts = np.array_split(rng.permutation(dataset.n), k)
    elif mode in ("label-shard", "label_shard", "non-iid"):
        n_shards = k * shards_per_device
        if dataset.n < n_shards:
            raise ConfigurationError(f"{dataset.n} samples cannot form {n_shards} shards")
        tiebreak = rng.permutation(dataset.n)
        order = tiebreak[np.argsort(dataset.labels[tiebreak], kind="stable")]
        shards = np.array_split(order, n_shards)
        deal = rng.permutation(n_shards)
        parts = [np.concatenate([shards[s] for s in
                                 deal[i * shards_per_device:(i + 1) * shards_per_device]])
                 for i in range(k)]
    else:
        raise ConfigurationError(f"unknown partition mode {mode!r}")
    return [dataset.subset(np.sort(p)) for p in parts]


# -- IDX -------------------------------------------------------------------
#
# [offset] [type]          [description]
# 0000     4 bytes         magic: 0x00 0x00 <type code> <ndim>
# 0004     ndim x uint32   big-endian dimension sizes
# ....     unsigned bytes  payload, row-major


def parse_idx(raw: bytes) -> np.ndarray:
    """Decode an IDX unsigned-byte tensor; gzip-wrapped input is unwrapped first."""
    raw = bytes(raw)
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise IdxTruncatedError("file shorter than the 4-byte magic", len(raw))
    zero, dtype, ndim = raw[:2], raw[2], raw[3]
    if zero != b"\x00\x00" or dtype != IDX_UBYTE or ndim < 1:
        raise IdxMagicError(f"bad magic 0x{raw[:4].hex()}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"header declares {ndim} dimensions", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for i, n in enumerate(dims):
        total *= n
        if total > MAX_IDX_ELEMENTS:
            raise IdxDimensionOverflowError(
                f"element count exceeds {MAX_IDX_ELEMENTS}", 4 + 4 * i)
    end = header + total
    if len(raw) < end:
        raise IdxTruncatedError(
            f"payload declares {total} bytes, {len(raw) - header} present", len(raw))
    if len(raw) > end:
        raise IdxTrailingDataError(f"{len(raw) - end} bytes after payload", end)
    return np.frombuffer(raw, dtype=np.uint8, count=total, offset=header).reshape(dims)


def serialize_idx(array) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise IdxParseError("only unsigned-byte tensors are supported", 2)
    if array.ndim < 1 or array.ndim > 255:
        raise IdxParseError("IDX supports 1 to 255 dimensions", 3)
    head = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array).tobytes()


def load_idx(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


def load_mnist(images_path, labels_path, normalize: bool = True) -> Dataset:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ConfigurationError("expected N x rows x cols images and N labels")
    x = images.reshape(len(images), -1).astype(float)
    if normalize:
        x /= 255.0
    return Dataset(x, labels.astype(np.int64), int(labels.max()) + 1)
