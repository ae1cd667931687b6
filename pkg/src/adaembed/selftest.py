"""Quick oracle and gradient checks runnable without pytest (``adaembed selftest``)."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import contrastive_loss, entropy_loss
from .memory import MemoryQueue
from .model import ema_update, init_model
from .pseudo_label import select_candidates


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _gradient_checks(rng: np.random.Generator, trials: int) -> CheckResult:
    labels = np.array([0, 2, 1, 2])
    cases: dict[str, tuple[Callable, Callable]] = {
        "matmul": (lambda a, b: ad.matmul(a, b).sum(), lambda: (rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))),
        "tanh": (lambda a: ad.tanh(a).sum(), lambda: rng.normal(size=(3, 3))),
        "l2_normalize": (lambda a: (ad.l2_normalize(a) * Tensor(np.arange(12.0).reshape(3, 4))).sum(), lambda: rng.normal(size=(3, 4))),
        "log_softmax": (lambda a: (ad.log_softmax(a) * Tensor(np.linspace(-1, 1, 12).reshape(4, 3))).sum(), lambda: rng.normal(size=(4, 3))),
        "cross_entropy": (lambda a: ad.cross_entropy(a, labels), lambda: rng.normal(size=(4, 3))),
        "entropy": (lambda a: entropy_loss(a), lambda: rng.normal(size=(4, 3))),
    }
    worst = {}
    for name, (fn, draw) in cases.items():
        worst[name] = max(ad.check_gradients(fn, draw()) for _ in range(trials))
    top = max(worst, key=worst.get)
    return CheckResult("gradients", bool(worst[top] < 1e-4), f"worst {top} rel err {worst[top]:.2e}")


def _knn_check(rng: np.random.Generator, trials: int) -> CheckResult:
    mismatches = 0
    for _ in range(trials):
        size, d, c, k = int(rng.integers(1, 60)), 4, 3, int(rng.integers(1, 12))
        q = MemoryQueue(64, d, c)
        q.enqueue(rng.normal(size=(size, d)), np.full((size, c), 1.0 / c))
        snap = q.snapshot()
        protos = ad.l2_normalize(Tensor(rng.normal(size=(c, d)))).data
        got = select_candidates(snap, protos, k)
        for i in range(c):
            ranked = sorted(range(snap.size), key=lambda j: (-float(protos[i] @ snap.features[j]), -int(snap.entry_ids[j])))
            mismatches += not np.array_equal(got[i], snap.entry_ids[ranked[:k]])
    return CheckResult("knn", mismatches == 0, f"{mismatches} mismatches over {trials} queues")


def _contrastive_check(rng: np.random.Generator, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        b, size, d, c, t = 4, 10, 5, 3, 0.05
        q = MemoryQueue(32, d, c)
        probs = rng.dirichlet(np.ones(c), size=size)
        q.enqueue(rng.normal(size=(size, d)), probs)
        snap = q.snapshot()
        f = rng.normal(size=(b, d))
        fm = rng.normal(size=(b, d))
        fm /= np.linalg.norm(fm, axis=1, keepdims=True)
        labels = rng.integers(0, c, size=b)
        got = contrastive_loss(Tensor(f), fm, snap, labels, t).item()
        total = 0.0
        for j in range(b):
            u = f[j] / np.linalg.norm(f[j])
            pos = np.exp(u @ fm[j] / t)
            den = pos + sum(np.exp(u @ snap.features[i] / t) for i in range(size) if snap.probs[i].argmax() != labels[j])
            total += -np.log(pos / den)
        worst = max(worst, abs(got - total / b))
    return CheckResult("contrastive", bool(worst < 1e-9), f"max abs err {worst:.1e}")


def _ema_check(rng: np.random.Generator) -> CheckResult:
    state = init_model(3, 2, hidden=(4,), feature_dim=3, rng=rng)
    start = [w.data.copy() for w, _ in state.momentum_encoder]
    for w, _ in state.encoder:
        w.data = rng.normal(size=w.data.shape)
    m, steps = 0.95, 200
    for _ in range(steps):
        ema_update(state, m)
    err = max(
        float(np.max(np.abs(mw.data - (m**steps * w0 + (1 - m**steps) * w.data))))
        for (mw, _), (w, _), w0 in zip(state.momentum_encoder, state.encoder, start)
    )
    return CheckResult("ema", bool(err < 1e-12), f"max abs err {err:.1e}")


def run_selftest(seed: int = 0, trials: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        _gradient_checks(rng, trials),
        _knn_check(rng, trials),
        _contrastive_check(rng, trials),
        _ema_check(rng),
    ]
