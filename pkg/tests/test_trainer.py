import math

import numpy as np
import pytest

from adaembed import RunConfig, train
from adaembed.autodiff import Tensor
from adaembed.data import TriBatchSampler, UnlabeledDataset
from adaembed.errors import ConfigError, ContractError
from adaembed.trainer import (
    ABLATION_ROWS,
    OptState,
    accuracy_from_predictions,
    build_benchmark,
    cosine_lr,
    format_ablation_table,
    run_ablation,
    run_label_sweep,
    sgd_step,
    write_metrics_csv,
)


def tiny(**kw):
    base = dict(n_per_domain=100, epochs=2, warmup_epochs=1, queue_size=200, shots=1)
    base.update(kw)
    return RunConfig(**base)


def scalar_opt(theta=1.0, grad=1.0, **kw):
    p = Tensor(np.array([theta]), requires_grad=True)
    p.grad = np.array([grad])
    kw.setdefault("momentum_mu", 0.0)
    kw.setdefault("weight_decay", 0.0)
    return p, OptState([p], **kw)


def test_sgd_examples():
    p, opt = scalar_opt(grad=0.0, base_lr=0.1)
    sgd_step(opt)
    assert p.data.item() == 1.0
    p, opt = scalar_opt(base_lr=0.1)
    sgd_step(opt)
    assert p.data.item() == pytest.approx(0.9, abs=1e-15)
    p, opt = scalar_opt(grad=0.0, base_lr=1.0, weight_decay=0.1)
    sgd_step(opt)
    assert p.data.item() == pytest.approx(0.9, abs=1e-15)
    assert p.grad is None and opt.current_step == 1


def test_sgd_momentum_and_lr_scale():
    p, opt = scalar_opt(base_lr=0.1, momentum_mu=0.9, total_steps=0, lr_scale=[0.5])
    sgd_step(opt)
    p.grad = np.array([1.0])
    sgd_step(opt)
    # velocities 1 then 1.9, each step scaled by 0.1 * 0.5
    assert p.data.item() == pytest.approx(1.0 - 0.05 * (1.0 + 1.9), abs=1e-15)


def test_sgd_contract_errors():
    p, opt = scalar_opt()
    p.grad = None
    with pytest.raises(ContractError):
        sgd_step(opt)
    with pytest.raises(ContractError):
        OptState([p], lr_scale=[1.0, 1.0])


def test_cosine_examples():
    opt = OptState([], base_lr=0.05, total_steps=100)
    assert cosine_lr(opt) == 0.05
    opt.current_step = 50
    assert cosine_lr(opt) == pytest.approx(0.025, abs=1e-15)
    opt.current_step = 100
    assert cosine_lr(opt) == pytest.approx(0.0, abs=1e-15)
    steps = []
    for s in range(101):
        opt.current_step = s
        steps.append(cosine_lr(opt))
    assert np.all(np.diff(steps) <= 0)


def test_evaluate_examples():
    r = accuracy_from_predictions(np.array([0, 1, 2]), np.array([0, 1, 2]), 3)
    assert r.overall == 1.0 and r.per_class.tolist() == [1.0, 1.0, 1.0] and r.mean_per_class == 1.0
    r = accuracy_from_predictions(np.array([0, 0, 0, 0]), np.array([0, 0, 1, 1]), 2)
    assert (r.overall, r.per_class.tolist(), r.mean_per_class) == (0.5, [1.0, 0.0], 0.5)
    r = accuracy_from_predictions(np.array([0, 1, 1]), np.array([0, 1, 1]), 3)
    assert r.absent_classes == (2,) and r.mean_per_class == 1.0 and math.isnan(r.per_class[2])
    with pytest.raises(ConfigError):
        accuracy_from_predictions(np.array([]), np.array([]), 2)


def test_smoke_run_on_100_samples():
    result = train(tiny(epochs=1))
    rec = result.metrics[0]
    assert all(math.isfinite(getattr(rec, k)) for k in ("loss_s", "loss_t", "loss_c", "entropy_H"))
    assert 0.0 <= rec.target_test_accuracy <= 1.0 and 0.0 <= rec.mask_rate <= 1.0


def test_step_accounting():
    config = tiny(epochs=3)
    bench = build_benchmark(config)
    result = train(config, bench)
    assert result.steps_per_epoch == math.ceil(len(bench.unlabeled) / config.batch_unlabeled)
    assert [r.step for r in result.metrics] == [e * result.steps_per_epoch for e in (1, 2, 3)]
    assert result.warmup_steps == math.ceil(len(bench.source) / config.batch_source)


def test_warmup_never_touches_unlabeled_pool(monkeypatch):
    calls = []
    original = TriBatchSampler.unlabeled_batch

    def counted(self):
        calls.append(1)
        return original(self)

    monkeypatch.setattr(TriBatchSampler, "unlabeled_batch", counted)
    result = train(tiny())
    assert len(calls) == result.total_steps


def test_loss_path_never_reads_hidden_labels(monkeypatch):
    def forbidden(self):
        raise AssertionError("hidden labels read")

    monkeypatch.setattr(UnlabeledDataset, "reveal_labels", forbidden)
    result = train(tiny(diagnostics=False))
    assert all(math.isnan(r.pseudo_label_accuracy) for r in result.metrics)


@pytest.mark.parametrize(
    "weight,term",
    [("lambda_t", "target"), ("lambda_c", "contrastive"), ("lambda_entropy", "entropy")],
)
def test_zero_weight_matches_omitted_term(weight, term):
    config = tiny(**{weight: 0.0})
    zeroed = train(config, record_steps=True)
    omitted = train(config, omit=(term,), record_steps=True)
    assert len(zeroed.step_log) == len(omitted.step_log) > 0
    worst = max(
        np.max(np.abs(ga - gb))
        for a, b in zip(zeroed.step_log, omitted.step_log)
        for ga, gb in zip(a["grads"], b["grads"])
    )
    assert worst <= 1e-12


def test_pseudo_labels_are_active_in_the_toggle_runs():
    assert max(r.mask_rate for r in train(tiny()).metrics) > 0


def test_all_toggles_off_reproduce_supervised_baseline():
    off = train(tiny(lambda_t=0.0, lambda_c=0.0, lambda_entropy=0.0, pseudo_labeling=False))
    base = train(tiny(method="supervised"))
    for a, b in zip(off.metrics, base.metrics):
        assert (a.loss_s, a.target_test_accuracy, a.per_class_accuracy) == (b.loss_s, b.target_test_accuracy, b.per_class_accuracy)
    for p, q in zip(off.state.parameters(), base.state.parameters()):
        assert np.array_equal(p.data, q.data)


def test_metrics_csv_is_deterministic(tmp_path):
    for name in ("a.csv", "b.csv"):
        write_metrics_csv(tmp_path / name, train(tiny()).metrics)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header[:12] == [
        "epoch", "step", "loss_s", "loss_t", "loss_c", "entropy_H", "mask_rate",
        "pseudo_label_accuracy", "lr", "target_test_accuracy", "per_class_accuracy", "mean_per_class_accuracy",
    ]


def test_seed_changes_the_run():
    assert train(tiny(seed=0)).metrics[-1].loss_s != train(tiny(seed=1)).metrics[-1].loss_s


def test_ablation_rows():
    rows = run_ablation(tiny(), seeds=(0,))
    assert tuple(r["ablation"] for r in rows) == ABLATION_ROWS
    no_pl = rows[0]
    assert no_pl["mask_rate"] == 0.0 and not no_pl["L_t"]
    assert [(r["L_t"], r["L_c"], r["H"]) for r in rows[1:]] == [(True, False, True), (True, True, False), (True, True, True)]
    table = format_ablation_table(rows).splitlines()
    assert len(table) == 5 and table[0].split()[:4] == ["Ablation", "L_t", "L_c", "H"]


def test_label_sweep_surfaces_cell_errors():
    rows = run_label_sweep(tiny(), shots_list=[0, 1000], seeds=(0,))
    assert [r["shots"] for r in rows] == [0, 1000]
    assert rows[0]["errors"] == [] and len(rows[0]["per_seed_acc"]) == 1
    assert len(rows[1]["errors"]) == 1 and math.isnan(rows[1]["acc"])
    with pytest.raises(ConfigError):
        run_label_sweep(tiny(), shots_list=[])
