"""Supervised, pseudo-label, contrastive and entropy terms plus their minimax sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .memory import QueueSnapshot
from .model import ModelState, classify, encode
from .pseudo_label import PseudoDecision

TERMS = ("supervised", "target", "contrastive", "entropy")


@dataclass
class LossWeights:
    lambda_entropy: float = 0.2
    lambda_t: float = 2.0
    lambda_c: float = 0.1
    contrastive_temperature: float = 0.05
    paper_literal_infonce: bool = False
    mean_over_selected: bool = False


@dataclass
class StepInputs:
    """Arrays one adaptation step feeds into the objective.

    Labeled rows are the augmented source and labeled-target views stacked
    together; unlabeled rows come with their momentum outputs and the ids
    under which those outputs were enqueued.
    """

    x_labeled_aug: np.ndarray
    y_labeled: np.ndarray
    x_unlabeled_aug: np.ndarray | None = None
    momentum_features: np.ndarray | None = None
    momentum_probs: np.ndarray | None = None
    entry_ids: np.ndarray | None = None


@dataclass
class LossBundle:
    total: Tensor
    loss_s: float = 0.0
    loss_t: float = 0.0
    loss_c: float = 0.0
    entropy_H: float = 0.0
    extras: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {"loss_s": self.loss_s, "loss_t": self.loss_t, "loss_c": self.loss_c, "entropy_H": self.entropy_H}


def supervised_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the pooled labeled batch."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("supervised loss needs at least one labeled sample")
    return ad.cross_entropy(logits, labels)


def target_pseudo_loss(logits_u: Tensor, decision: PseudoDecision, mean_over_selected: bool = False) -> Tensor:
    """(1/b) sum_j mask_j * CE(y_hat_j, p~_j); pseudo-labels enter as constants."""
    mask = np.asarray(decision.mask, dtype=bool)
    labels = np.where(mask, decision.pseudo_label, 0)
    weights = mask.astype(np.float64)
    if mean_over_selected and mask.any():
        weights *= mask.size / mask.sum()
    return ad.cross_entropy(logits_u, labels, weights)


def contrastive_keep_mask(anchor_labels: np.ndarray, anchor_ids: np.ndarray | None, snapshot: QueueSnapshot) -> np.ndarray:
    """(b, |Q|) mask of usable negatives: stored argmax differs and not the anchor's own entry."""
    queue_labels = snapshot.probs.argmax(axis=1) if snapshot.size else np.zeros(0, dtype=np.int64)
    keep = queue_labels[None, :] != np.asarray(anchor_labels)[:, None]
    if anchor_ids is not None:
        keep &= snapshot.entry_ids[None, :] != np.asarray(anchor_ids)[:, None]
    return keep


def contrastive_loss(
    f_aug: Tensor,
    f_momentum: np.ndarray,
    snapshot: QueueSnapshot,
    anchor_labels: np.ndarray,
    temperature: float = 0.05,
    anchor_ids: np.ndarray | None = None,
    paper_literal: bool = False,
) -> Tensor:
    """InfoNCE between f~ and f', with negatives drawn from differently-labeled queue entries.

    By default the positive pair is part of the denominator. With
    ``paper_literal`` the denominator holds negatives only, which needs at
    least one negative per anchor.
    """
    if temperature <= 0:
        raise ConfigError("contrastive temperature must be positive")
    f_hat = ad.l2_normalize(f_aug)
    f_momentum = np.asarray(f_momentum, dtype=np.float64)
    scale = 1.0 / temperature
    pos_col = (f_hat * f_momentum).sum(axis=1, keepdims=True) * scale
    pos = (f_hat * f_momentum).sum(axis=1) * scale
    keep_neg = contrastive_keep_mask(anchor_labels, anchor_ids, snapshot)
    b = f_momentum.shape[0]
    if snapshot.size:
        neg = ad.matmul(f_hat, Tensor(snapshot.features.T)) * scale
    if paper_literal:
        if snapshot.size == 0 or not np.all(keep_neg.any(axis=1)):
            raise ContractError("paper_literal_infonce needs at least one negative per anchor")
        lse = ad.logsumexp(neg, keep_neg)
    elif snapshot.size:
        keep = np.concatenate([np.ones((b, 1), dtype=bool), keep_neg], axis=1)
        lse = ad.logsumexp(ad.concat([pos_col, neg], axis=1), keep)
    else:
        lse = ad.logsumexp(pos_col)
    return (lse - pos).mean()


def entropy_loss(logits: Tensor) -> Tensor:
    """Mean Shannon entropy -sum p log p of softmax(logits) over rows."""
    p = ad.softmax(logits)
    logp = ad.log_softmax(logits)
    return -(p * logp).sum() * (1.0 / logits.shape[0])


def shannon_entropy(probs: np.ndarray) -> float:
    """Numpy reference: mean over rows of -sum p log p with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(-terms.sum(axis=1).mean())


def combined_objective(
    state: ModelState,
    inputs: StepInputs,
    decision: PseudoDecision | None,
    snapshot: QueueSnapshot | None,
    weights: LossWeights,
    omit: tuple[str, ...] = (),
) -> LossBundle:
    """Build ``L_s + lt*L_t + lc*L_c - l*H(GRL(f~))`` in one graph.

    The entropy branch routes encoder features through a gradient reversal
    layer before the classifier. After one backward pass W has descended
    ``-l*H`` (ascending entropy) while the encoder has descended ``+l*H``.
    Terms named in ``omit`` are not built at all.
    """
    unknown = set(omit) - set(TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")

    f_l = encode(state, inputs.x_labeled_aug)
    logits_l, _ = classify(state, f_l)
    loss_s = supervised_loss(logits_l, inputs.y_labeled)
    total = loss_s
    bundle = LossBundle(total, loss_s=loss_s.item())

    unlabeled_terms = [t for t in TERMS[1:] if t not in omit]
    if inputs.x_unlabeled_aug is None or not unlabeled_terms:
        return bundle

    f_u = encode(state, inputs.x_unlabeled_aug)
    if "target" in unlabeled_terms:
        logits_u, _ = classify(state, f_u)
        if decision is None:
            decision = PseudoDecision.empty(f_u.shape[0], state.n_classes)
        loss_t = target_pseudo_loss(logits_u, decision, weights.mean_over_selected)
        total = total + loss_t * weights.lambda_t
        bundle.loss_t = loss_t.item()
    if "contrastive" in unlabeled_terms:
        loss_c = contrastive_loss(
            f_u,
            inputs.momentum_features,
            snapshot,
            np.asarray(inputs.momentum_probs).argmax(axis=1),
            weights.contrastive_temperature,
            anchor_ids=inputs.entry_ids,
            paper_literal=weights.paper_literal_infonce,
        )
        total = total + loss_c * weights.lambda_c
        bundle.loss_c = loss_c.item()
    if "entropy" in unlabeled_terms:
        logits_rev, _ = classify(state, ad.gradient_reversal(f_u, 1.0))
        entropy = entropy_loss(logits_rev)
        total = total - entropy * weights.lambda_entropy
        bundle.entropy_H = entropy.item()
    bundle.total = total
    return bundle
