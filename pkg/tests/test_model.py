import numpy as np
import pytest

from adaembed import autodiff as ad
from adaembed.autodiff import Tensor, backward
from adaembed.errors import ConfigError, ContractError, DegenerateInputError, DimensionError
from adaembed.model import (
    classify,
    ema_update,
    encode,
    init_model,
    load_checkpoint,
    prototypes,
    save_checkpoint,
    sync_momentum,
)

RNG = np.random.default_rng(7)


def small_model(seed=0, **kw):
    kw.setdefault("hidden", (6, 5))
    kw.setdefault("feature_dim", 4)
    return init_model(3, 3, rng=seed, **kw)


def test_shapes_and_momentum_copy():
    state = init_model(4, 3)
    assert [w.shape for w, _ in state.encoder] == [(4, 64), (64, 64), (64, 16)]
    assert state.W.shape == (16, 3)
    for (w, b), (mw, mb) in zip(state.encoder, state.momentum_encoder):
        assert np.array_equal(w.data, mw.data) and np.array_equal(b.data, mb.data)
        assert not mw.requires_grad and not mb.requires_grad


def test_init_bounds():
    state = init_model(9, 3, hidden=(25,), feature_dim=16, rng=3)
    assert np.max(np.abs(state.encoder[0][0].data)) <= 1 / 3
    assert np.max(np.abs(state.encoder[1][0].data)) <= 1 / 5
    assert np.max(np.abs(state.W.data)) <= 1 / 4


def test_zero_final_layer_gives_zero_features():
    state = small_model()
    w, b = state.encoder[-1]
    w.data[:] = 0.0
    b.data[:] = 0.0
    assert np.array_equal(encode(state, RNG.normal(size=(5, 3))).data, np.zeros((5, 4)))


def test_momentum_forward_is_deterministic_and_gradient_free():
    state = small_model()
    x = RNG.normal(size=(5, 3))
    a, b = encode(state, x, use_momentum=True), encode(state, x, use_momentum=True)
    assert np.array_equal(a.data, b.data)
    assert a.is_leaf
    logits, _ = classify(state, encode(state, x))
    loss = ad.cross_entropy(logits, [0, 1, 2, 0, 1]) + (encode(state, x, use_momentum=True) * 2.0).sum()
    backward(loss)
    assert all(p.grad is None for p in state.momentum_parameters())
    assert all(p.grad is not None for p in state.encoder_parameters())


def test_encode_dimension_error():
    with pytest.raises(DimensionError):
        encode(small_model(), np.ones((2, 5)))


def test_classify_examples():
    state = small_model()
    state.W = Tensor(np.eye(2), requires_grad=True)
    state.encoder = [(Tensor(np.eye(3)[:, :2]), Tensor(np.zeros(2)))]
    state.classifier_temperature = 1.0
    logits, probs = classify(state, Tensor([[3.0, 4.0]]))
    assert np.allclose(logits.data, [[0.6, 0.8]], atol=1e-15)
    assert np.allclose(probs.data.sum(), 1.0)
    state.classifier_temperature = 0.05
    logits, _ = classify(state, Tensor([[3.0, 4.0]]))
    assert np.allclose(logits.data, [[12.0, 16.0]], atol=1e-12)


def test_classify_cosine_bound():
    state = small_model()
    w = RNG.normal(size=(4, 3))
    w /= np.linalg.norm(w, axis=0)
    state.W = Tensor(w, requires_grad=True)
    state.classifier_temperature = 1.0
    logits, _ = classify(state, Tensor(w[:, :1].T * 2.5))
    assert logits.data[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert logits.data[0, 0] == logits.data.max()


def test_classify_scale_invariance_and_bound():
    state = small_model(seed=4)
    f = RNG.normal(size=(10, 4))
    base, _ = classify(state, Tensor(f))
    for alpha in (0.1, 10.0):
        scaled, _ = classify(state, Tensor(alpha * f))
        assert np.max(np.abs(scaled.data - base.data)) < 1e-9
        assert np.array_equal(scaled.data.argmax(axis=1), base.data.argmax(axis=1))
    bound = np.linalg.norm(state.W.data, axis=0).max() / state.classifier_temperature
    assert np.all(np.abs(base.data) <= bound + 1e-12)


def test_classify_degenerate_feature():
    with pytest.raises(DegenerateInputError):
        classify(small_model(), Tensor(np.zeros((1, 4))))


def test_ema_examples():
    state = init_model(1, 2, hidden=(), feature_dim=1, rng=0)
    (w, b), (mw, mb) = state.encoder[0], state.momentum_encoder[0]
    w.data[:], b.data[:], mw.data[:], mb.data[:] = 1.0, 1.0, 2.0, 2.0
    ema_update(state, 0.95)
    assert mw.data.item() == pytest.approx(1.95, abs=1e-15)
    assert w.data.item() == 1.0
    ema_update(state, 1.0)
    assert mw.data.item() == pytest.approx(1.95, abs=1e-15)
    ema_update(state, 0.0)
    assert mw.data.item() == 1.0
    for bad in (-0.1, 1.5):
        with pytest.raises(ConfigError):
            ema_update(state, bad)


def test_ema_closed_form_over_200_steps():
    state = small_model(seed=2)
    start = [t.data.copy() for t in state.momentum_parameters()]
    for t in state.encoder_parameters():
        t.data = RNG.normal(size=t.shape)
    m, steps = 0.95, 200
    for _ in range(steps):
        ema_update(state, m)
    for mt, t, t0 in zip(state.momentum_parameters(), state.encoder_parameters(), start):
        closed = m**steps * t0 + (1 - m**steps) * t.data
        assert np.max(np.abs(mt.data - closed)) < 1e-12


def test_sync_momentum_copies_exactly():
    state = small_model()
    for t in state.encoder_parameters():
        t.data = RNG.normal(size=t.shape)
    sync_momentum(state)
    for mt, t in zip(state.momentum_parameters(), state.encoder_parameters()):
        assert np.array_equal(mt.data, t.data) and mt.data is not t.data


def test_prototype_examples():
    state = small_model()
    state.W = Tensor(np.eye(2), requires_grad=True)
    assert np.array_equal(prototypes(state), np.eye(2))
    state.W = Tensor([[3.0, 1.0], [4.0, 0.0]], requires_grad=True)
    assert np.allclose(prototypes(state)[0], [0.6, 0.8], atol=1e-15)
    assert np.array_equal(state.W.data, [[3.0, 1.0], [4.0, 0.0]])
    state.W = Tensor(RNG.normal(size=(4, 3)))
    assert np.allclose(np.linalg.norm(prototypes(state), axis=1), 1.0, atol=1e-12)
    state.W = Tensor([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(DegenerateInputError):
        prototypes(state)


def test_checkpoint_round_trip(tmp_path):
    state = small_model(seed=9)
    for t in state.parameters():
        t.data = RNG.normal(size=t.shape)
    config = {"k": 10, "seed": 9}
    path = tmp_path / "ckpt.npz"
    save_checkpoint(state, path, config)
    loaded = load_checkpoint(path, config)
    for a, b in zip(state.parameters() + state.momentum_parameters(), loaded.parameters() + loaded.momentum_parameters()):
        assert np.array_equal(a.data, b.data)
    assert loaded.classifier_temperature == state.classifier_temperature
    assert all(p.requires_grad for p in loaded.parameters())
    with pytest.raises(ContractError):
        load_checkpoint(path, {"k": 11, "seed": 9})
