"""Synthetic domain-shift benchmarks, n-shot splits, augmentation and batching."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError

TEST_FRACTION = 0.2


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    domain: str = "source"
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigError(f"{self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels")
        if self.domain not in ("source", "target") or self.split not in ("train", "test"):
            raise ConfigError(f"bad domain/split tags {self.domain!r}/{self.split!r}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


class UnlabeledDataset:
    """Unlabeled target pool.

    The true labels are kept for diagnostics (pseudo-label accuracy) and are
    only reachable through ``reveal_labels``; the training loss path never
    calls it.
    """

    def __init__(self, inputs: np.ndarray, hidden_labels: np.ndarray | None = None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.__labels = None if hidden_labels is None else np.asarray(hidden_labels, dtype=np.int64).copy()

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def reveal_labels(self) -> np.ndarray | None:
        """Diagnostic-only access to the withheld labels."""
        return None if self.__labels is None else self.__labels.copy()


@dataclass
class ShiftSpec:
    """Affine shift applied to target draws: rotate, scale, translate, then add noise.

    Rotation acts by the same angle in every coordinate plane (0,1), (2,3), ...
    """

    rotation_degrees: float = 0.0
    scale: float | Sequence[float] = 1.0
    translation: float | Sequence[float] = 0.0
    noise_sigma: float = 0.0
    class_prior: Sequence[float] | None = None

    def validate(self, input_dim: int, n_classes: int) -> None:
        scale = np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (input_dim,))
        np.broadcast_to(np.asarray(self.translation, dtype=np.float64), (input_dim,))
        if np.any(scale <= 0):
            raise ConfigError("shift scale factors must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.class_prior is not None:
            prior = np.asarray(self.class_prior, dtype=np.float64)
            if prior.shape != (n_classes,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
                raise ConfigError(f"class_prior must be {n_classes} nonnegative values summing to 1")

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        d = x.shape[1]
        out = rotate(x, self.rotation_degrees)
        out = out * np.broadcast_to(np.asarray(self.scale, dtype=np.float64), (d,))
        out = out + np.broadcast_to(np.asarray(self.translation, dtype=np.float64), (d,))
        if self.noise_sigma > 0:
            out = out + rng.normal(0.0, self.noise_sigma, size=out.shape)
        return out


def rotate(x: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate every (2i, 2i+1) coordinate pair by ``degrees``; an odd last coordinate is left alone."""
    if degrees == 0:
        return x.copy()
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    out = x.copy()
    for i in range(0, x.shape[1] - 1, 2):
        a, b = x[:, i], x[:, i + 1]
        out[:, i] = c * a - s * b
        out[:, i + 1] = s * a + c * b
    return out


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _balanced_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % n_classes)


def _stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(fraction * members.size))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def make_shifted_blobs(
    n_classes: int,
    input_dim: int,
    n_per_domain: int,
    shift: ShiftSpec | None = None,
    seed: int = 0,
    radius: float = 3.0,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Unit-covariance Gaussian blobs with means on a random sphere of ``radius``.

    Returns ``(source, target_train, target_test)``; the target draws come
    from the source distribution pushed through ``shift``, and the test split
    takes 20% of each target class.
    """
    shift = shift or ShiftSpec()
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    if n_per_domain < 10 * n_classes:
        raise ConfigError(f"n_per_domain must be at least 10 * n_classes = {10 * n_classes}")
    if input_dim < 1:
        raise ConfigError("input_dim must be positive")
    shift.validate(input_dim, n_classes)
    mean_rng, src_rng, tgt_rng, split_rng = _streams(seed, 4)

    means = mean_rng.normal(size=(n_classes, input_dim))
    means *= radius / np.linalg.norm(means, axis=1, keepdims=True)

    y_s = _balanced_labels(n_per_domain, n_classes, src_rng)
    x_s = means[y_s] + src_rng.normal(size=(n_per_domain, input_dim))

    if shift.class_prior is None:
        y_t = _balanced_labels(n_per_domain, n_classes, tgt_rng)
    else:
        y_t = tgt_rng.choice(n_classes, size=n_per_domain, p=np.asarray(shift.class_prior, dtype=np.float64))
    x_t = shift.apply(means[y_t] + tgt_rng.normal(size=(n_per_domain, input_dim)), tgt_rng)

    train_idx, test_idx = _stratified_split(y_t, TEST_FRACTION, split_rng)
    return (
        LabeledDataset(x_s, y_s, "source", "train"),
        LabeledDataset(x_t[train_idx], y_t[train_idx], "target", "train"),
        LabeledDataset(x_t[test_idx], y_t[test_idx], "target", "test"),
    )


def _moons(n: int) -> tuple[np.ndarray, np.ndarray]:
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.concatenate([np.c_[np.cos(t_out), np.sin(t_out)], np.c_[1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5]])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    return x, y


def make_two_moons_shift(
    n_per_domain: int,
    rotation_degrees: float = 0.0,
    noise_sigma: float = 0.1,
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Two interleaved arcs; the target copy is rotated about the origin.

    Both domains share the same arc positions and ordering, with independent
    Gaussian noise, so zero rotation and zero noise give identical domains.
    """
    if n_per_domain < 50:
        raise ConfigError("two-moons needs n_per_domain >= 50")
    perm_rng, src_rng, tgt_rng, split_rng = _streams(seed, 4)
    base, y = _moons(n_per_domain)
    order = perm_rng.permutation(n_per_domain)
    base, y = base[order], y[order]
    x_s = base + (src_rng.normal(0.0, noise_sigma, base.shape) if noise_sigma > 0 else 0.0)
    x_t = rotate(base, rotation_degrees) + (tgt_rng.normal(0.0, noise_sigma, base.shape) if noise_sigma > 0 else 0.0)
    train_idx, test_idx = _stratified_split(y, TEST_FRACTION, split_rng)
    return (
        LabeledDataset(x_s, y, "source", "train"),
        LabeledDataset(x_t[train_idx], y[train_idx], "target", "train"),
        LabeledDataset(x_t[test_idx], y[test_idx], "target", "test"),
    )


def nshot_split(target_train: LabeledDataset, shots_per_class: int, seed: int = 0, n_classes: int | None = None):
    """Pick exactly ``shots_per_class`` labeled rows per class; the rest become unlabeled.

    ``shots_per_class=0`` is the unsupervised setting (empty labeled set).
    """
    if shots_per_class < 0:
        raise ConfigError("shots_per_class must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    labels = target_train.labels
    n_classes = n_classes if n_classes is not None else int(labels.max()) + 1
    chosen = []
    for cls in range(n_classes):
        members = np.flatnonzero(labels == cls)
        if members.size < shots_per_class:
            raise ConfigError(f"class {cls} has {members.size} target samples, fewer than {shots_per_class} shots")
        chosen.append(rng.choice(members, size=shots_per_class, replace=False))
    labeled_idx = np.sort(np.concatenate(chosen)).astype(np.int64)
    rest = np.setdiff1d(np.arange(len(labels)), labeled_idx)
    labeled = LabeledDataset(target_train.inputs[labeled_idx], labels[labeled_idx], "target", "train")
    unlabeled = UnlabeledDataset(target_train.inputs[rest], labels[rest])
    return labeled, unlabeled


@dataclass
class AugmentPolicy:
    jitter_sigma: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    dropout_prob: float = 0.1

    def validate(self) -> None:
        lo, hi = self.scale_range
        if self.jitter_sigma < 0 or lo < 0 or hi < lo:
            raise ConfigError("augmentation values must be nonnegative with scale_range low <= high")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError("dropout_prob must lie in [0, 1)")


def augment(x: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Jitter, per-sample scaling and inverted feature dropout."""
    policy.validate()
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = x + rng.normal(0.0, policy.jitter_sigma, size=x.shape) if policy.jitter_sigma > 0 else x.copy()
    lo, hi = policy.scale_range
    if hi > lo:
        out *= rng.uniform(lo, hi, size=(n, 1))
    elif lo != 1.0:
        out *= lo
    if policy.dropout_prob > 0:
        keep = rng.random(size=x.shape) >= policy.dropout_prob
        out = out * keep / (1.0 - policy.dropout_prob)
    return out


class _Cycler:
    """Endless index stream over a pool, reshuffled at every pass."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            if self._pos >= self._order.size:
                self._order = self.rng.permutation(self.size)
                self._pos = 0
            chunk = self._order[self._pos:self._pos + n - filled]
            out[filled:filled + chunk.size] = chunk
            filled += chunk.size
            self._pos += chunk.size
        return out


class SubBatch(NamedTuple):
    x: np.ndarray
    x_aug: np.ndarray
    y: np.ndarray | None
    index: np.ndarray


class TriBatch(NamedTuple):
    source: SubBatch
    target: SubBatch
    unlabeled: SubBatch

    @property
    def x_labeled_aug(self) -> np.ndarray:
        return np.concatenate([self.source.x_aug, self.target.x_aug])

    @property
    def y_labeled(self) -> np.ndarray:
        return np.concatenate([self.source.y, self.target.y])


@dataclass
class TriBatchSampler:
    """Draws (labeled source, labeled target, unlabeled target) mini-batches.

    Each pool has its own index stream and augmentation stream, so whether
    one pool is consumed never changes what the others produce.
    """

    source: LabeledDataset
    target: LabeledDataset | None
    unlabeled: UnlabeledDataset | None
    batch_sizes: tuple[int, int, int] = (8, 8, 16)
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0

    def __post_init__(self):
        b_s, b_t, b_u = self.batch_sizes
        if len(self.source) == 0 or b_s < 1:
            raise ConfigError("source pool and its batch size must be nonempty")
        if self.target is None or len(self.target) == 0:
            if b_t != 0:
                raise ConfigError("labeled-target batch size must be 0 when there is no labeled target data")
        elif b_t < 1:
            raise ConfigError("labeled-target batch size must be positive when labeled target data exists")
        if self.unlabeled is None or len(self.unlabeled) == 0:
            raise ConfigError("unlabeled target pool is empty")
        if b_u < 1:
            raise ConfigError("unlabeled batch size must be positive")
        self.policy.validate()
        streams = _streams(self.seed, 6)
        self._idx = {
            "source": _Cycler(len(self.source), streams[0]),
            "target": _Cycler(max(1, len(self.target) if self.target is not None else 1), streams[1]),
            "unlabeled": _Cycler(len(self.unlabeled), streams[2]),
        }
        self._aug = {"source": streams[3], "target": streams[4], "unlabeled": streams[5]}

    @property
    def steps_per_epoch(self) -> int:
        return int(np.ceil(len(self.unlabeled) / self.batch_sizes[2]))

    def _draw(self, pool: str, size: int) -> SubBatch:
        data = {"source": self.source, "target": self.target, "unlabeled": self.unlabeled}[pool]
        if size == 0:
            width = self.source.input_dim
            return SubBatch(np.zeros((0, width)), np.zeros((0, width)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        idx = self._idx[pool].take(size)
        x = data.inputs[idx]
        y = data.labels[idx] if isinstance(data, LabeledDataset) else None
        return SubBatch(x, augment(x, self.policy, self._aug[pool]), y, idx)

    def labeled(self) -> tuple[SubBatch, SubBatch]:
        b_s, b_t, _ = self.batch_sizes
        return self._draw("source", b_s), self._draw("target", b_t)

    def unlabeled_batch(self) -> SubBatch:
        return self._draw("unlabeled", self.batch_sizes[2])

    def sample(self) -> TriBatch:
        s, t = self.labeled()
        return TriBatch(s, t, self.unlabeled_batch())


# ----------------------------------------------------------------------------
# CSV interchange
# ----------------------------------------------------------------------------

def write_datasets_csv(path, datasets: Sequence[LabeledDataset]) -> None:
    """Rows ``domain,split,label,x_0..x_{D-1}``; floats written with repr for exact round-trip."""
    if not datasets:
        raise ConfigError("nothing to write")
    dim = datasets[0].input_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "split", "label", *[f"x_{i}" for i in range(dim)]])
        for ds in datasets:
            for row, label in zip(ds.inputs, ds.labels):
                writer.writerow([ds.domain, ds.split, int(label), *[repr(float(v)) for v in row]])


def read_datasets_csv(path) -> dict[tuple[str, str], LabeledDataset]:
    """Inverse of ``write_datasets_csv``; keyed by ``(domain, split)``."""
    rows: dict[tuple[str, str], tuple[list, list]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["domain", "split", "label"]:
            raise ConfigError(f"{path}: header must start with domain,split,label")
        dim = len(header) - 3
        if header[3:] != [f"x_{i}" for i in range(dim)] or dim == 0:
            raise ConfigError(f"{path}: feature columns must be x_0..x_{{D-1}}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != dim + 3:
                raise ConfigError(f"{path}:{lineno}: expected {dim + 3} fields, got {len(rec)}")
            xs, ys = rows.setdefault((rec[0], rec[1]), ([], []))
            ys.append(int(rec[2]))
            xs.append([float(v) for v in rec[3:]])
    return {key: LabeledDataset(np.array(xs).reshape(-1, dim), np.array(ys), *key) for key, (xs, ys) in rows.items()}
