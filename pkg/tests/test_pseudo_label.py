import numpy as np
import pytest

from adaembed.memory import MemoryQueue
from adaembed.pseudo_label import PseudoDecision, assign, assign_by_confidence, select_candidates


def queue_of(features, probs=None, capacity=256):
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    probs = np.full((n, 2), 0.5) if probs is None else np.asarray(probs)
    q = MemoryQueue(capacity, d, probs.shape[1])
    q.enqueue(features, probs)
    return q


def brute_force(features, ids, protos, k):
    """Full sort by (cosine desc, entry id desc)."""
    out = []
    for p in protos:
        sims = [float(np.dot(p, f) / (np.linalg.norm(p) * np.linalg.norm(f))) for f in features]
        ranked = sorted(range(len(ids)), key=lambda j: (-sims[j], -ids[j]))
        out.append([ids[j] for j in ranked[:k]])
    return out


def test_orthogonal_example():
    snap = queue_of([[1.0, 0.0], [0.0, 1.0]]).snapshot()
    got = select_candidates(snap, np.eye(2), 1)
    assert [g.tolist() for g in got] == [[0], [1]]


def test_diagonal_example():
    snap = queue_of([[1.0, 0.0], [0.0, 1.0], [0.707, 0.707]]).snapshot()
    got = select_candidates(snap, np.array([[1.0, 0.0]]), 2)
    assert set(got[0].tolist()) == {0, 2}


def test_saturation_and_empty():
    snap = queue_of(np.random.default_rng(0).normal(size=(5, 2))).snapshot()
    for cand in select_candidates(snap, np.eye(2), 9):
        assert sorted(cand.tolist()) == [0, 1, 2, 3, 4]
    empty = MemoryQueue(4, 2, 2).snapshot()
    assert all(c.size == 0 for c in select_candidates(empty, np.eye(2), 3))


def test_ties_go_to_most_recent():
    snap = queue_of([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [3.0, 0.0]]).snapshot()
    got = select_candidates(snap, np.array([[1.0, 0.0]]), 2)
    assert got[0].tolist() == [3, 1]


def test_matches_brute_force_on_100_random_queues():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for trial in range(100):
        size, d, c = int(rng.integers(1, 201)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
        k = int(rng.integers(1, 25))
        capacity = int(rng.integers(size, 260))
        q = MemoryQueue(capacity, d, c)
        # prepend some evicted entries so ids do not start at zero
        q.enqueue(rng.normal(size=(capacity, d)), rng.dirichlet(np.ones(c), size=capacity))
        feats = rng.normal(size=(size, d))
        if trial % 4 == 0:
            feats[rng.integers(0, size, size=size // 3)] = feats[0]  # exact duplicates force ties
        q.enqueue(feats, rng.dirichlet(np.ones(c), size=size))
        snap = q.snapshot()
        protos = rng.normal(size=(c, d))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        got = select_candidates(snap, protos, k)
        want = brute_force(snap.features, snap.entry_ids.tolist(), protos, k)
        for g, w in zip(got, want):
            mismatches += g.tolist() != w
            assert len(g) == min(k, snap.size)
    assert mismatches == 0


def test_selection_invariant_to_prototype_scale():
    rng = np.random.default_rng(5)
    snap = queue_of(rng.normal(size=(40, 3)), capacity=64).snapshot()
    W = rng.normal(size=(3, 4))
    unit = lambda m: (m / np.linalg.norm(m, axis=0)).T  # noqa: E731
    a = select_candidates(snap, unit(W), 6)
    b = select_candidates(snap, unit(5 * W), 6)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_assign_examples():
    sets = [np.array([7]), np.array([3])]
    d = assign(np.array([[0.95, 0.05]]), np.array([7]), sets, 0.9)
    assert d.mask.tolist() == [True] and d.pseudo_label.tolist() == [0]
    d = assign(np.array([[0.6, 0.4]]), np.array([7]), sets, 0.9)
    assert d.mask.tolist() == [False] and d.pseudo_label.tolist() == [-1]
    d = assign(np.array([[0.99, 0.01]]), np.array([8]), sets, 0.9)
    assert d.mask.tolist() == [False]


def test_assign_argmax_ties_go_to_lowest_class_and_counts():
    sets = [np.array([0, 1]), np.array([1]), np.array([], dtype=np.int64)]
    d = assign(np.array([[0.45, 0.45, 0.1], [0.1, 0.1, 0.8]]), np.array([0, 1]), sets, 0.0)
    assert d.pseudo_label.tolist() == [0, 2]
    assert d.per_class_candidate_count.tolist() == [2, 1, 0]


def test_decision_invariants_during_random_steps():
    rng = np.random.default_rng(9)
    c, k = 4, 5
    q = MemoryQueue(60, 3, c)
    for _ in range(200):
        b = int(rng.integers(1, 12))
        probs = rng.dirichlet(np.full(c, 0.3), size=b)
        ids = q.enqueue(rng.normal(size=(b, 3)), probs)
        snap = q.snapshot()
        protos = rng.normal(size=(c, 3))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        sets = select_candidates(snap, protos, k)
        d = assign(probs, ids, sets, 0.5)
        assert np.all(d.per_class_candidate_count == min(k, snap.size))
        assert np.unique(np.concatenate(sets)).size <= c * k
        assert np.all((d.pseudo_label >= 0) == d.mask)
        assert np.all(d.pseudo_label[d.mask] < c)
        assert np.array_equal(d.pseudo_label[d.mask], probs.argmax(axis=1)[d.mask])
        assert d.histogram(c).sum() == d.mask.sum()


def test_confidence_reference_and_empty():
    d = assign_by_confidence(np.array([[0.95, 0.05], [0.5, 0.5], [0.05, 0.95]]), 0.9)
    assert d.mask.tolist() == [True, False, True] and d.pseudo_label.tolist() == [0, -1, 1]
    e = PseudoDecision.empty(3, 2)
    assert e.mask_rate == 0.0 and e.histogram(2).tolist() == [0, 0]


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        select_candidates(queue_of([[1.0, 0.0]]).snapshot(), np.eye(2), 0)
