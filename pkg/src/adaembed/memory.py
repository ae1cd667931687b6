"""Fixed-capacity FIFO of momentum features and probabilities."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .autodiff import NORM_FLOOR
from .errors import ConfigError, DegenerateInputError, DimensionError


class QueueSnapshot(NamedTuple):
    features: np.ndarray  # (size, d), unit rows
    probs: np.ndarray  # (size, c)
    entry_ids: np.ndarray  # (size,), oldest first

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


class MemoryQueue:
    """Ring buffer holding ``(f', p')`` pairs with monotone entry ids.

    >>> q = MemoryQueue(capacity=2, feature_dim=2, n_classes=2)
    >>> q.enqueue([[3.0, 4.0]], [[0.5, 0.5]]).tolist()
    [0]
    >>> q.snapshot().features.tolist()
    [[0.6, 0.8]]
    """

    def __init__(self, capacity: int, feature_dim: int, n_classes: int):
        if capacity < 1:
            raise ConfigError(f"queue capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self.n_classes = int(n_classes)
        self._features = np.zeros((self.capacity, self.feature_dim))
        self._probs = np.zeros((self.capacity, self.n_classes))
        self._ids = np.zeros(self.capacity, dtype=np.int64)
        self._next_id = 0
        self._head = 0  # slot of the oldest entry
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def total_inserted(self) -> int:
        return self._next_id

    def enqueue(self, features, probs) -> np.ndarray:
        """Append a batch (normalizing features) and return the new entry ids."""
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if f.shape[1] != self.feature_dim or p.shape[1] != self.n_classes or f.shape[0] != p.shape[0]:
            raise DimensionError(
                f"expected ({f.shape[0]}, {self.feature_dim}) features and matching ({f.shape[0]}, {self.n_classes}) probs, "
                f"got {f.shape} and {p.shape}"
            )
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        if np.any(~(norms >= NORM_FLOOR)):
            raise DegenerateInputError("cannot store a zero-norm feature")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9) or np.any(p < 0):
            raise ValueError("probability rows must be nonnegative and sum to 1")
        f = f / norms
        n = f.shape[0]
        ids = np.arange(self._next_id, self._next_id + n, dtype=np.int64)
        self._next_id += n
        if n >= self.capacity:
            f, p, ids_kept = f[-self.capacity:], p[-self.capacity:], ids[-self.capacity:]
            self._features[:], self._probs[:], self._ids[:] = f, p, ids_kept
            self._head, self._size = 0, self.capacity
            return ids
        tail = (self._head + self._size) % self.capacity
        slots = (tail + np.arange(n)) % self.capacity
        self._features[slots] = f
        self._probs[slots] = p
        self._ids[slots] = ids
        overflow = max(0, self._size + n - self.capacity)
        self._head = (self._head + overflow) % self.capacity
        self._size = min(self.capacity, self._size + n)
        return ids

    def snapshot(self) -> QueueSnapshot:
        order = (self._head + np.arange(self._size)) % self.capacity
        return QueueSnapshot(self._features[order].copy(), self._probs[order].copy(), self._ids[order].copy())


def cold_start_threshold(capacity: int, k: int, n_classes: int) -> int:
    """Queue size below which kNN pseudo-labeling stays off.

    Capped at ``capacity`` so that a full queue always enables it, even when
    ``k * n_classes`` exceeds the capacity.
    """
    return min(capacity, max(k * n_classes, int(np.ceil(capacity / 10))))
