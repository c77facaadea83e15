"""Datasets and client partitioning.

Synthetic Gaussian blobs are the default workload; :func:`load_mnist` reads
the IDX files for runs closer to the real task.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import PartitionError

__all__ = [
    "DatasetPartition",
    "make_blobs",
    "partition_noniid",
    "partition_iid",
    "read_idx",
    "load_mnist",
]


@dataclass(frozen=True)
class DatasetPartition:
    client_id: Hashable
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.y_train)

    @property
    def n_test(self) -> int:
        return len(self.y_test)

    @property
    def labels(self) -> set:
        return set(np.unique(np.concatenate([self.y_train, self.y_test])).tolist())


def make_blobs(
    n_samples: int,
    n_classes: int,
    n_features: int,
    rng: np.random.Generator,
    *,
    separation: float = 4.0,
    noise: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian classes with centers ``separation`` apart on average.

    Class sizes differ by at most one.
    """
    if n_classes < 2 or n_samples < n_classes:
        raise ValueError("need at least two classes and one sample per class")
    centers = rng.normal(size=(n_classes, n_features))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    y = np.arange(n_samples) % n_classes
    X = centers[y] + noise * rng.normal(size=(n_samples, n_features))
    perm = rng.permutation(n_samples)
    return X[perm], y[perm]


def _ids(n_clients: int, client_ids: Sequence[Hashable] | None) -> list:
    if client_ids is None:
        return list(range(n_clients))
    if len(client_ids) != n_clients:
        raise PartitionError("client_ids must have one entry per client")
    return list(client_ids)


def _split(cid, X, y, rng, test_fraction) -> DatasetPartition:
    perm = rng.permutation(len(y))
    n_test = int(round(len(y) * test_fraction))
    if test_fraction > 0:
        n_test = max(n_test, 1)
    if len(y) - n_test < 1:
        raise PartitionError(f"client {cid!r} would have no training data")
    test, train = perm[:n_test], perm[n_test:]
    return DatasetPartition(cid, X[train], y[train], X[test], y[test])


def partition_noniid(
    X: np.ndarray,
    y: np.ndarray,
    n_clients: int,
    shards_per_client: int,
    rng: np.random.Generator,
    *,
    test_fraction: float = 0.2,
    client_ids: Sequence[Hashable] | None = None,
) -> list[DatasetPartition]:
    """Label-sorted sharding.

    Examples are sorted by label and cut into ``n_clients * shards_per_client``
    equal contiguous shards (any remainder is dropped). Shards are dealt to
    clients at random without replacement, and each client holds out
    ``test_fraction`` of its examples for testing.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    ids = _ids(n_clients, client_ids)
    n_shards = n_clients * shards_per_client
    if n_clients < 1 or shards_per_client < 1:
        raise PartitionError("n_clients and shards_per_client must be positive")
    shard_size = len(y) // n_shards if n_shards else 0
    if shard_size < 1:
        raise PartitionError(f"{len(y)} examples cannot fill {n_shards} shards")
    order = np.argsort(y, kind="stable")
    shards = order[: n_shards * shard_size].reshape(n_shards, shard_size)
    dealt = rng.permutation(n_shards).reshape(n_clients, shards_per_client)
    parts = []
    for cid, shard_ids in zip(ids, dealt):
        idx = np.concatenate([shards[s] for s in shard_ids])
        parts.append(_split(cid, X[idx], y[idx], rng, test_fraction))
    return parts


def partition_iid(
    X: np.ndarray,
    y: np.ndarray,
    n_clients: int,
    rng: np.random.Generator,
    *,
    test_fraction: float = 0.2,
    client_ids: Sequence[Hashable] | None = None,
) -> list[DatasetPartition]:
    """Uniform random split into equal client partitions."""
    X = np.asarray(X)
    y = np.asarray(y)
    ids = _ids(n_clients, client_ids)
    size = len(y) // n_clients
    if size < 2:
        raise PartitionError(f"{len(y)} examples cannot serve {n_clients} clients")
    perm = rng.permutation(len(y))[: size * n_clients].reshape(n_clients, size)
    return [_split(cid, X[idx], y[idx], rng, test_fraction) for cid, idx in zip(ids, perm)]


_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into an array.

    MNIST images carry magic ``0x00000803`` and labels ``0x00000801``.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    dtype = _IDX_DTYPES.get(raw[2])
    if dtype is None:
        raise ValueError(f"{path}: unknown IDX type code 0x{raw[2]:02x}")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    offset = 4 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - offset != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match dimensions {dims}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def load_mnist(images_path: str | Path, labels_path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError("expected images of shape (n, rows, cols) and n labels")
    X = images.reshape(len(images), -1).astype(float) / 255.0
    return X, labels.astype(int)
