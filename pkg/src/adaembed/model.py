"""Encoder, momentum encoder and cosine-prototype classifier."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError

CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    """Parameters of F (``encoder``), F' (``momentum_encoder``) and C (``W``).

    ``encoder`` and ``momentum_encoder`` are lists of ``(weight, bias)``
    pairs with weight shaped ``(fan_in, fan_out)``. ``W`` is ``(d, c)``; its
    columns are the class prototypes.
    """

    encoder: list[tuple[Tensor, Tensor]]
    momentum_encoder: list[tuple[Tensor, Tensor]]
    W: Tensor
    classifier_temperature: float = 0.05
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Tensor]:
        """Trainable tensors: encoder layers followed by the classifier matrix."""
        params = [t for layer in self.encoder for t in layer]
        params.append(self.W)
        return params

    def encoder_parameters(self) -> list[Tensor]:
        return [t for layer in self.encoder for t in layer]

    def momentum_parameters(self) -> list[Tensor]:
        return [t for layer in self.momentum_encoder for t in layer]

    def copy(self) -> "ModelState":
        def clone(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        return ModelState(
            encoder=[(clone(w), clone(b)) for w, b in self.encoder],
            momentum_encoder=[(clone(w), clone(b)) for w, b in self.momentum_encoder],
            W=clone(self.W),
            classifier_temperature=self.classifier_temperature,
            meta=dict(self.meta),
        )


def init_model(
    input_dim: int,
    n_classes: int,
    hidden: Sequence[int] = (64, 64),
    feature_dim: int = 16,
    classifier_temperature: float = 0.05,
    rng: np.random.Generator | int | None = 0,
) -> ModelState:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; F' starts as an exact copy of F."""
    if classifier_temperature <= 0:
        raise ConfigError("classifier_temperature must be positive")
    if n_classes < 2 or input_dim < 1 or feature_dim < 1:
        raise ConfigError("need n_classes >= 2 and positive input/feature dimensions")
    rng = np.random.default_rng(rng)
    widths = [input_dim, *hidden, feature_dim]
    encoder = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        encoder.append((Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)))
    bound = 1.0 / np.sqrt(feature_dim)
    W = Tensor(rng.uniform(-bound, bound, size=(feature_dim, n_classes)), requires_grad=True)
    momentum = [(Tensor(w.data.copy()), Tensor(b.data.copy())) for w, b in encoder]
    return ModelState(encoder, momentum, W, classifier_temperature)


def _mlp(layers, x: Tensor) -> Tensor:
    h = x
    for i, (w, b) in enumerate(layers):
        h = ad.linear(h, w, b)
        if i < len(layers) - 1:
            h = ad.tanh(h)
    return h


def encode(state: ModelState, x, use_momentum: bool = False) -> Tensor:
    """Raw (un-normalized) features of ``x``.

    The momentum branch runs without recording a graph, so nothing it
    produces can carry gradient back into F' or F.
    """
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != state.input_dim:
        raise DimensionError(f"encoder expects (n, {state.input_dim}) input, got {x.shape}")
    if use_momentum:
        with ad.no_grad():
            return _mlp(state.momentum_encoder, x)
    return _mlp(state.encoder, x)


def classify(state: ModelState, f: Tensor) -> tuple[Tensor, Tensor]:
    """Cosine logits ``W^T f_hat / T`` and their softmax."""
    f = ad.as_tensor(f)
    if f.ndim != 2 or f.shape[1] != state.feature_dim:
        raise DimensionError(f"classifier expects (n, {state.feature_dim}) features, got {f.shape}")
    logits = ad.matmul(ad.l2_normalize(f), state.W) * (1.0 / state.classifier_temperature)
    return logits, ad.softmax(logits)


def momentum_outputs(state: ModelState, x) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm momentum features f' and probabilities p' as plain arrays."""
    with ad.no_grad():
        f = ad.l2_normalize(encode(state, x, use_momentum=True))
        _, p = classify(state, f)
    return f.data, p.data


def ema_update(state: ModelState, m: float) -> None:
    """theta_F' <- m * theta_F' + (1 - m) * theta_F, in place."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1], got {m}")
    for (mw, mb), (w, b) in zip(state.momentum_encoder, state.encoder):
        mw.data = m * mw.data + (1.0 - m) * w.data
        mb.data = m * mb.data + (1.0 - m) * b.data


def sync_momentum(state: ModelState) -> None:
    """Copy F into F' exactly."""
    for (mw, mb), (w, b) in zip(state.momentum_encoder, state.encoder):
        mw.data = w.data.copy()
        mb.data = b.data.copy()


def prototypes(state: ModelState) -> np.ndarray:
    """Rows are the l2-normalized columns of W; W itself is left untouched."""
    norms = np.linalg.norm(state.W.data, axis=0)
    if np.any(norms < ad.NORM_FLOOR):
        raise DegenerateInputError(f"prototype columns {np.flatnonzero(norms < ad.NORM_FLOOR).tolist()} have zero norm")
    return (state.W.data / norms).T.copy()


def predict(state: ModelState, x) -> np.ndarray:
    with ad.no_grad():
        logits, _ = classify(state, encode(state, x))
    return logits.data.argmax(axis=1)


def features(state: ModelState, x) -> np.ndarray:
    with ad.no_grad():
        return encode(state, x).data


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(state: ModelState, path, config: dict | None = None) -> None:
    arrays = {"W": state.W.data}
    for i, (w, b) in enumerate(state.encoder):
        arrays[f"encoder_{i}_w"], arrays[f"encoder_{i}_b"] = w.data, b.data
    for i, (w, b) in enumerate(state.momentum_encoder):
        arrays[f"momentum_{i}_w"], arrays[f"momentum_{i}_b"] = w.data, b.data
    header = {
        "version": CHECKPOINT_VERSION,
        "n_layers": len(state.encoder),
        "classifier_temperature": state.classifier_temperature,
        "config_hash": config_hash(config or {}),
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path, config: dict | None = None) -> ModelState:
    """Exact inverse of ``save_checkpoint``; checks the config hash when given."""
    with np.load(Path(path), allow_pickle=False) as npz:
        header = json.loads(str(npz["__header__"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {header.get('version')}")
        if config is not None and header["config_hash"] != config_hash(config):
            raise ContractError("checkpoint was written under a different config")
        n = header["n_layers"]
        encoder = [
            (Tensor(npz[f"encoder_{i}_w"].copy(), requires_grad=True), Tensor(npz[f"encoder_{i}_b"].copy(), requires_grad=True))
            for i in range(n)
        ]
        momentum = [(Tensor(npz[f"momentum_{i}_w"].copy()), Tensor(npz[f"momentum_{i}_b"].copy())) for i in range(n)]
        W = Tensor(npz["W"].copy(), requires_grad=True)
    return ModelState(encoder, momentum, W, header["classifier_temperature"], meta={"config_hash": header["config_hash"]})
