from collections import deque

import numpy as np
import pytest

from adaembed.errors import ConfigError, DegenerateInputError, DimensionError
from adaembed.memory import MemoryQueue, cold_start_threshold


def uniform(n, c):
    return np.full((n, c), 1.0 / c)


def test_fifo_example():
    q = MemoryQueue(3, 2, 2)
    ids = q.enqueue(np.eye(2)[[0, 1, 0, 1]] + 0.1, uniform(4, 2))
    assert ids.tolist() == [0, 1, 2, 3]
    assert q.snapshot().entry_ids.tolist() == [1, 2, 3]


def test_count_and_normalization_examples():
    q = MemoryQueue(5, 2, 2)
    q.enqueue([[3.0, 4.0], [0.0, 2.0]], uniform(2, 2))
    snap = q.snapshot()
    assert len(q) == 2
    assert np.allclose(snap.features[0], [0.6, 0.8], atol=1e-15)


def test_empty_snapshot_keeps_dims():
    snap = MemoryQueue(4, 3, 5).snapshot()
    assert snap.features.shape == (0, 3) and snap.probs.shape == (0, 5)
    assert snap.size == 0 and snap.feature_dim == 3 and snap.n_classes == 5


def test_snapshot_is_a_copy():
    q = MemoryQueue(4, 2, 2)
    q.enqueue([[1.0, 0.0]], uniform(1, 2))
    snap = q.snapshot()
    snap.features[:] = 99.0
    snap.entry_ids[:] = -5
    fresh = q.snapshot()
    assert np.array_equal(fresh.features, [[1.0, 0.0]]) and fresh.entry_ids.tolist() == [0]


def test_read_after_write():
    q = MemoryQueue(4, 2, 2)
    q.enqueue([[1.0, 0.0]], uniform(1, 2))
    q.enqueue([[0.0, 1.0]], uniform(1, 2))
    assert q.snapshot().entry_ids.tolist() == [0, 1]


def test_errors():
    q = MemoryQueue(4, 2, 3)
    with pytest.raises(DimensionError):
        q.enqueue(np.ones((1, 3)), uniform(1, 3))
    with pytest.raises(DimensionError):
        q.enqueue(np.ones((1, 2)), uniform(1, 2))
    with pytest.raises(DimensionError):
        q.enqueue(np.ones((2, 2)), uniform(1, 3))
    with pytest.raises(DegenerateInputError):
        q.enqueue(np.zeros((1, 2)), uniform(1, 3))
    with pytest.raises(ValueError):
        q.enqueue(np.ones((1, 2)), [[0.5, 0.5, 0.5]])
    with pytest.raises(ConfigError):
        MemoryQueue(0, 2, 2)


def test_randomized_enqueues_match_reference_deque():
    rng = np.random.default_rng(11)
    capacity, d, c = 37, 3, 4
    q = MemoryQueue(capacity, d, c)
    ref = deque(maxlen=capacity)
    total = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 50)) if rng.random() < 0.05 else int(rng.integers(1, 6))
        f = rng.normal(size=(n, d)) * rng.uniform(0.01, 100)
        p = rng.dirichlet(np.ones(c), size=n)
        ids = q.enqueue(f, p)
        assert ids.tolist() == list(range(total, total + n))
        for j in range(n):
            ref.append((total + j, f[j] / np.linalg.norm(f[j]), p[j]))
        total += n
        snap = q.snapshot()
        assert snap.size == len(q) == min(total, capacity)
        assert snap.entry_ids.tolist() == list(range(total - snap.size, total))
        assert np.all(np.diff(snap.entry_ids) > 0)
        assert np.max(np.abs(np.linalg.norm(snap.features, axis=1) - 1.0)) < 1e-9
        assert np.max(np.abs(snap.probs.sum(axis=1) - 1.0)) < 1e-9
    assert q.total_inserted == total
    ids, fs, ps = zip(*ref)
    snap = q.snapshot()
    assert snap.entry_ids.tolist() == list(ids)
    assert np.allclose(snap.features, np.array(fs), atol=1e-15)
    assert np.array_equal(snap.probs, np.array(ps))


def test_cold_start_threshold():
    assert cold_start_threshold(1000, 10, 3) == 100
    assert cold_start_threshold(1000, 10, 20) == 200
    # never above capacity, so a full queue always enables pseudo-labeling
    assert cold_start_threshold(1000, 10, 126) == 1000
    assert cold_start_threshold(100, 100, 3) == 100
