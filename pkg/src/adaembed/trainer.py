"""Training loop, optimizer, evaluation, and the ablation / label-sweep drivers."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import (
    AugmentPolicy,
    LabeledDataset,
    ShiftSpec,
    TriBatchSampler,
    UnlabeledDataset,
    make_shifted_blobs,
    make_two_moons_shift,
    nshot_split,
    read_datasets_csv,
)
from .errors import ConfigError, ContractError, DivergenceError
from .losses import LossWeights, StepInputs, combined_objective
from .memory import MemoryQueue, cold_start_threshold
from .model import ModelState, classify, ema_update, encode, init_model, momentum_outputs, prototypes, sync_momentum
from .pseudo_label import PseudoDecision, assign, assign_by_confidence, select_candidates

logger = logging.getLogger(__name__)

ABLATION_ROWS = ("No pseudo-labeling", "No contrastive loss", "No entropy loss", "AdaEmbed")


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

@dataclass
class OptState:
    params: list[Tensor]
    base_lr: float = 0.05
    momentum_mu: float = 0.9
    weight_decay: float = 1e-4
    total_steps: int = 1
    current_step: int = 0
    velocity: list[np.ndarray] = field(default_factory=list)
    lr_scale: list[float] = field(default_factory=list)  # per-parameter multiplier on lr

    def __post_init__(self):
        if not self.velocity:
            self.velocity = [np.zeros_like(p.data) for p in self.params]
        if not self.lr_scale:
            self.lr_scale = [1.0] * len(self.params)
        if len(self.lr_scale) != len(self.params):
            raise ContractError("lr_scale needs one entry per parameter")
        if any(v.shape != p.data.shape for v, p in zip(self.velocity, self.params)):
            raise ContractError("velocity shapes must match parameter shapes")


def cosine_lr(opt: OptState) -> float:
    """base_lr * (1 + cos(pi * step / total)) / 2, clamped at the end of the schedule."""
    if opt.total_steps <= 0:
        return opt.base_lr
    t = min(max(opt.current_step, 0), opt.total_steps) / opt.total_steps
    return max(0.0, opt.base_lr * 0.5 * (1.0 + math.cos(math.pi * t)))


def sgd_step(opt: OptState) -> float:
    """Heavy-ball SGD with L2 weight decay; clears gradients and advances the step counter."""
    missing = [i for i, p in enumerate(opt.params) if p.grad is None]
    if missing:
        raise ContractError(f"parameters {missing} have no gradient")
    lr = cosine_lr(opt)
    for p, v, scale in zip(opt.params, opt.velocity, opt.lr_scale):
        g = p.grad + opt.weight_decay * p.data
        v *= opt.momentum_mu
        v += g
        p.data = p.data - (lr * scale) * v
        p.grad = None
    opt.current_step += 1
    return lr


# ----------------------------------------------------------------------------
# evaluation and records
# ----------------------------------------------------------------------------

class EvalResult(NamedTuple):
    overall: float
    per_class: np.ndarray  # nan for classes absent from the test set
    mean_per_class: float
    absent_classes: tuple[int, ...]


def accuracy_from_predictions(pred: np.ndarray, labels: np.ndarray, n_classes: int) -> EvalResult:
    if labels.size == 0:
        raise ConfigError("cannot evaluate on an empty test set")
    per_class = np.full(n_classes, np.nan)
    for cls in range(n_classes):
        sel = labels == cls
        if sel.any():
            per_class[cls] = float((pred[sel] == cls).mean())
    present = ~np.isnan(per_class)
    return EvalResult(
        float((pred == labels).mean()),
        per_class,
        float(per_class[present].mean()),
        tuple(int(c) for c in np.flatnonzero(~present)),
    )


def evaluate(state: ModelState, test: LabeledDataset) -> EvalResult:
    """Overall accuracy, per-class accuracy, and their mean over classes present in ``test``."""
    if len(test) == 0:
        raise ConfigError("cannot evaluate on an empty test set")
    with ad.no_grad():
        logits, _ = classify(state, encode(state, test.inputs))
    return accuracy_from_predictions(logits.data.argmax(axis=1), test.labels, state.n_classes)


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    loss_s: float
    loss_t: float
    loss_c: float
    entropy_H: float
    mask_rate: float
    pseudo_label_accuracy: float
    lr: float
    target_test_accuracy: float
    per_class_accuracy: tuple
    mean_per_class_accuracy: float
    pseudo_label_histogram: tuple = ()
    confidence_histogram: tuple = ()
    absent_classes: tuple = ()

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        out = []
        for name in self.columns():
            v = getattr(self, name)
            if isinstance(v, tuple):
                out.append(";".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v))
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def write_metrics_csv(path, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRecord.columns())
        for rec in records:
            writer.writerow(rec.row())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------------

@dataclass
class Benchmark:
    source: LabeledDataset
    target_train: LabeledDataset
    target_test: LabeledDataset
    target_labeled: LabeledDataset
    unlabeled: UnlabeledDataset


def generate_domains(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """(source, target_train, target_test) for the configured dataset."""
    if config.dataset == "blobs":
        shift = ShiftSpec(
            rotation_degrees=config.rotation_degrees,
            scale=config.scale if len(config.scale) > 1 else config.scale[0],
            translation=config.translation if len(config.translation) > 1 else config.translation[0],
            noise_sigma=config.noise_sigma,
            class_prior=config.class_prior or None,
        )
        return make_shifted_blobs(config.n_classes, config.input_dim, config.n_per_domain, shift, config.seed, config.radius)
    if config.dataset == "moons":
        return make_two_moons_shift(config.n_per_domain, config.rotation_degrees, config.noise_sigma, config.seed)
    found = read_datasets_csv(config.data_csv)
    try:
        return found[("source", "train")], found[("target", "train")], found[("target", "test")]
    except KeyError as exc:
        raise ConfigError(f"{config.data_csv}: missing rows for {exc.args[0]}") from None


def build_benchmark(config: RunConfig, domains=None) -> Benchmark:
    source, target_train, target_test = domains if domains is not None else generate_domains(config)
    if source.input_dim != config.input_dim:
        raise ConfigError(f"input_dim: config says {config.input_dim}, data has {source.input_dim}")
    labeled, unlabeled = nshot_split(target_train, config.shots, config.seed, config.n_classes)
    return Benchmark(source, target_train, target_test, labeled, unlabeled)


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: ModelState
    metrics: list[MetricsRecord]
    config: RunConfig
    steps_per_epoch: int
    total_steps: int
    warmup_steps: int
    step_log: list[dict] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1].target_test_accuracy

    @property
    def best_accuracy(self) -> float:
        return max(r.target_test_accuracy for r in self.metrics)

    def summary(self) -> dict:
        best = max(self.metrics, key=lambda r: r.target_test_accuracy)
        last = self.metrics[-1]
        return {
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "steps_per_epoch": self.steps_per_epoch,
            "total_steps": self.total_steps,
            "warmup_steps": self.warmup_steps,
            "final": {"epoch": last.epoch, "accuracy": last.target_test_accuracy, "mean_per_class_accuracy": last.mean_per_class_accuracy},
            "best": {"epoch": best.epoch, "accuracy": best.target_test_accuracy, "mean_per_class_accuracy": best.mean_per_class_accuracy},
        }


def _loss_weights(config: RunConfig) -> LossWeights:
    return LossWeights(
        lambda_entropy=config.lambda_entropy,
        lambda_t=config.lambda_t,
        lambda_c=config.lambda_c,
        contrastive_temperature=config.contrastive_temperature,
        paper_literal_infonce=config.paper_literal_infonce,
        mean_over_selected=config.mean_over_selected,
    )


def _check_finite(values: dict, step: int) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise DivergenceError(f"non-finite loss at step {step}: {bad}", step=step)


def _check_params(params: list[Tensor], step: int) -> None:
    if not all(np.isfinite(p.data).all() for p in params):
        raise DivergenceError(f"non-finite parameters after the update at step {step}", step=step)


def train(
    config: RunConfig,
    benchmark: Benchmark | None = None,
    omit: tuple[str, ...] = (),
    record_steps: bool = False,
) -> TrainResult:
    """Supervised warmup followed by the adaptation loop.

    With ``method = supervised`` the unlabeled pool is never touched (the
    S+T baseline, or source-only when there are no target labels).
    ``omit`` drops loss terms from the graph entirely; it exists to check
    that a zero weight and an absent term give the same updates.
    """
    benchmark = benchmark or build_benchmark(config)
    init_seq, sampler_seq = np.random.SeedSequence(config.seed).spawn(2)
    state = init_model(
        config.input_dim,
        config.n_classes,
        hidden=config.hidden,
        feature_dim=config.feature_dim,
        classifier_temperature=config.classifier_temperature,
        rng=np.random.default_rng(init_seq),
    )
    policy = AugmentPolicy(config.jitter_sigma, (config.scale_low, config.scale_high), config.dropout_prob)
    sampler = TriBatchSampler(
        benchmark.source,
        benchmark.target_labeled if len(benchmark.target_labeled) else None,
        benchmark.unlabeled,
        config.batch_sizes,
        policy,
        seed=int(sampler_seq.generate_state(1)[0]),
    )
    params = state.parameters()
    # encoder parameters come first; the classifier W is last
    lr_scale = [config.encoder_lr_mult] * (len(params) - 1) + [1.0]
    use_target_in_warmup = config.warmup_data == "source+target"

    # -- warmup on labeled data -------------------------------------------------
    warm_per_epoch = int(math.ceil(len(benchmark.source) / config.batch_source))
    warmup_steps = config.warmup_epochs * warm_per_epoch
    warm_opt = OptState(params, config.base_lr, config.momentum_mu, config.weight_decay, total_steps=warmup_steps, lr_scale=lr_scale)
    for step in range(warmup_steps):
        s, t = sampler.labeled()
        if use_target_in_warmup:
            x, y = np.concatenate([s.x_aug, t.x_aug]), np.concatenate([s.y, t.y])
        else:
            x, y = s.x_aug, s.y
        bundle = combined_objective(state, StepInputs(x, y), None, None, _loss_weights(config))
        _check_finite(bundle.values(), -warmup_steps + step)
        ad.zero_grad(params)
        ad.backward(bundle.total)
        sgd_step(warm_opt)
        _check_params(params, -warmup_steps + step)
    sync_momentum(state)

    # -- adaptation --------------------------------------------------------------
    adapt = config.method == "adaembed"
    steps_per_epoch = sampler.steps_per_epoch
    total_steps = config.epochs * steps_per_epoch
    opt = OptState(params, config.base_lr, config.momentum_mu, config.weight_decay, total_steps=total_steps, lr_scale=list(lr_scale))
    weights = _loss_weights(config)
    queue = MemoryQueue(config.queue_size, config.feature_dim, config.n_classes)
    threshold = cold_start_threshold(config.queue_size, config.k, config.n_classes)
    hidden_labels = benchmark.unlabeled.reveal_labels() if (config.diagnostics and adapt) else None

    metrics: list[MetricsRecord] = []
    step_log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(("loss_s", "loss_t", "loss_c", "entropy_H"), 0.0)
        masked = selected_correct = seen_u = 0
        hist = np.zeros(config.n_classes, dtype=np.int64)
        conf_hist = np.zeros(config.n_classes, dtype=np.int64)
        lr = cosine_lr(opt)
        for _ in range(steps_per_epoch):
            s, t = sampler.labeled()
            inputs = StepInputs(np.concatenate([s.x_aug, t.x_aug]), np.concatenate([s.y, t.y]))
            decision = snapshot = None
            if adapt:
                u = sampler.unlabeled_batch()
                if config.store_labeled_target and len(t.x):
                    queue.enqueue(*momentum_outputs(state, t.x))
                f_m, p_m = momentum_outputs(state, u.x)
                ids = queue.enqueue(f_m, p_m)
                snapshot = queue.snapshot()
                if config.pseudo_labeling and len(queue) >= threshold:
                    if config.pseudo_label_strategy == "knn":
                        decision = assign(p_m, ids, select_candidates(snapshot, prototypes(state), config.k), config.conf_threshold)
                    else:
                        decision = assign_by_confidence(p_m, config.conf_threshold)
                else:
                    decision = PseudoDecision.empty(len(ids), config.n_classes)
                inputs.x_unlabeled_aug = u.x_aug
                inputs.momentum_features = f_m
                inputs.momentum_probs = p_m
                inputs.entry_ids = ids
                seen_u += len(ids)
                masked += int(decision.mask.sum())
                hist += decision.histogram(config.n_classes)
                if len(queue) >= threshold:
                    conf_hist += assign_by_confidence(p_m, config.conf_threshold).histogram(config.n_classes)
                if hidden_labels is not None and decision.mask.any():
                    truth = hidden_labels[u.index]
                    selected_correct += int((decision.pseudo_label[decision.mask] == truth[decision.mask]).sum())
            bundle = combined_objective(state, inputs, decision, snapshot, weights, omit)
            values = bundle.values()
            _check_finite(values, opt.current_step)
            ad.zero_grad(params)
            ad.backward(bundle.total)
            if record_steps:
                step_log.append({"step": opt.current_step, **values, "grads": [p.grad.copy() for p in params]})
            lr = sgd_step(opt)
            _check_params(params, opt.current_step - 1)
            if adapt:
                ema_update(state, config.ema_momentum)
            for key in sums:
                sums[key] += values[key]
        ev = evaluate(state, benchmark.target_test)
        metrics.append(
            MetricsRecord(
                epoch=epoch,
                step=opt.current_step,
                **{k: v / steps_per_epoch for k, v in sums.items()},
                mask_rate=masked / seen_u if seen_u else 0.0,
                pseudo_label_accuracy=selected_correct / masked if masked and hidden_labels is not None else float("nan"),
                lr=lr,
                target_test_accuracy=ev.overall,
                per_class_accuracy=tuple(float(v) for v in ev.per_class),
                mean_per_class_accuracy=ev.mean_per_class,
                pseudo_label_histogram=tuple(int(v) for v in hist),
                confidence_histogram=tuple(int(v) for v in conf_hist),
                absent_classes=ev.absent_classes,
            )
        )
        logger.debug("epoch %d acc %.4f mask %.3f", epoch, ev.overall, metrics[-1].mask_rate)
    return TrainResult(state, metrics, config, steps_per_epoch, total_steps, warmup_steps, step_log)


# ----------------------------------------------------------------------------
# multi-run drivers
# ----------------------------------------------------------------------------

def _run_cell(config: RunConfig) -> dict:
    result = train(config)
    return {
        "seed": config.seed,
        "final_accuracy": result.final_accuracy,
        "final_mean_per_class": result.metrics[-1].mean_per_class_accuracy,
        "best_accuracy": result.best_accuracy,
        "mask_rate": float(np.mean([r.mask_rate for r in result.metrics])),
    }


def _map(configs: list[RunConfig], workers: int) -> list:
    if workers <= 1:
        out = []
        for cfg in configs:
            try:
                out.append(_run_cell(cfg))
            except Exception as exc:  # surfaced per cell
                out.append(exc)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_cell, cfg) for cfg in configs]
        out = []
        for fut in futures:
            try:
                out.append(fut.result())
            except Exception as exc:
                out.append(exc)
        return out


def ablation_configs(config: RunConfig) -> dict[str, RunConfig]:
    base = config.replace(method="adaembed")
    return {
        "No pseudo-labeling": base.replace(lambda_t=0.0, pseudo_labeling=False),
        "No contrastive loss": base.replace(lambda_c=0.0),
        "No entropy loss": base.replace(lambda_entropy=0.0),
        "AdaEmbed": base,
    }


def run_ablation(config: RunConfig, seeds: Sequence[int] | None = None, workers: int = 1) -> list[dict]:
    """Four runs per seed (three single-term removals plus the full method).

    Rows carry ``avg`` (mean per-class accuracy) and ``acc`` (overall
    accuracy), final-epoch, averaged over seeds.
    """
    seeds = tuple(seeds if seeds is not None else config.seeds)
    variants = ablation_configs(config)
    cells = [(name, cfg.replace(seed=s)) for name, cfg in variants.items() for s in seeds]
    results = _map([cfg for _, cfg in cells], workers)
    rows = []
    for name, cfg in variants.items():
        runs = [r for (n, _), r in zip(cells, results) if n == name]
        errors = [str(r) for r in runs if isinstance(r, Exception)]
        ok = [r for r in runs if not isinstance(r, Exception)]
        rows.append(
            {
                "ablation": name,
                "L_t": cfg.lambda_t > 0 and cfg.pseudo_labeling,
                "L_c": cfg.lambda_c > 0,
                "H": cfg.lambda_entropy > 0,
                "avg": float(np.mean([r["final_mean_per_class"] for r in ok])) if ok else float("nan"),
                "acc": float(np.mean([r["final_accuracy"] for r in ok])) if ok else float("nan"),
                "best_acc": float(np.mean([r["best_accuracy"] for r in ok])) if ok else float("nan"),
                "mask_rate": float(np.mean([r["mask_rate"] for r in ok])) if ok else float("nan"),
                "per_seed_acc": [r["final_accuracy"] for r in ok],
                "errors": errors,
            }
        )
    return rows


def run_label_sweep(config: RunConfig, shots_list: Sequence[int] | None = None, seeds: Sequence[int] | None = None, workers: int = 1) -> list[dict]:
    """Accuracy-versus-shots curve; a failing cell is reported and the sweep goes on."""
    shots_list = tuple(shots_list if shots_list is not None else config.shots_list)
    if not shots_list:
        raise ConfigError("shots_list must be nonempty")
    seeds = tuple(seeds if seeds is not None else config.seeds)
    cells = [(n, config.replace(shots=n, seed=s)) for n in shots_list for s in seeds]
    results = _map([cfg for _, cfg in cells], workers)
    rows = []
    for n in shots_list:
        runs = [r for (m, _), r in zip(cells, results) if m == n]
        ok = [r for r in runs if not isinstance(r, Exception)]
        rows.append(
            {
                "shots": n,
                "acc": float(np.mean([r["final_accuracy"] for r in ok])) if ok else float("nan"),
                "avg": float(np.mean([r["final_mean_per_class"] for r in ok])) if ok else float("nan"),
                "best_acc": float(np.mean([r["best_accuracy"] for r in ok])) if ok else float("nan"),
                "per_seed_acc": [r["final_accuracy"] for r in ok],
                "errors": [str(r) for r in runs if isinstance(r, Exception)],
            }
        )
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    tick = lambda flag: "x" if flag else " "  # noqa: E731
    lines = [f"{'Ablation':<22}{'L_t':^5}{'L_c':^5}{'H':^5}{'Avg.':>8}{'Acc.':>8}"]
    for r in rows:
        lines.append(
            f"{r['ablation']:<22}{tick(r['L_t']):^5}{tick(r['L_c']):^5}{tick(r['H']):^5}"
            f"{100 * r['avg']:>8.2f}{100 * r['acc']:>8.2f}"
        )
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# feature export
# ----------------------------------------------------------------------------

def export_features(state: ModelState, benchmark: Benchmark, path) -> None:
    """Write ``domain,split,true_label,pred_label,f_0..f_{d-1}`` for every split."""
    unlabeled_truth = benchmark.unlabeled.reveal_labels()
    groups = [
        ("source", "train", benchmark.source.inputs, benchmark.source.labels),
        ("target", "train", benchmark.target_labeled.inputs, benchmark.target_labeled.labels),
        ("target", "train", benchmark.unlabeled.inputs, unlabeled_truth if unlabeled_truth is not None else np.full(len(benchmark.unlabeled), -1)),
        ("target", "test", benchmark.target_test.inputs, benchmark.target_test.labels),
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "split", "true_label", "pred_label", *[f"f_{i}" for i in range(state.feature_dim)]])
        for domain, split, x, y in groups:
            if len(x) == 0:
                continue
            with ad.no_grad():
                f = encode(state, x)
                logits, _ = classify(state, f)
            pred = logits.data.argmax(axis=1)
            for row, yt, yp in zip(f.data, y, pred):
                writer.writerow([domain, split, int(yt), int(yp), *[repr(float(v)) for v in row]])


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
