"""Balanced pseudo-labels from the k nearest queue entries of each prototype."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import QueueSnapshot


@dataclass
class PseudoDecision:
    mask: np.ndarray  # bool (b,)
    pseudo_label: np.ndarray  # int (b,), -1 where mask is false
    per_class_candidate_count: np.ndarray  # int (c,)

    @property
    def mask_rate(self) -> float:
        return float(self.mask.mean()) if self.mask.size else 0.0

    def histogram(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.pseudo_label[self.mask], minlength=n_classes)

    @classmethod
    def empty(cls, batch_size: int, n_classes: int) -> "PseudoDecision":
        return cls(
            np.zeros(batch_size, dtype=bool),
            np.full(batch_size, -1, dtype=np.int64),
            np.zeros(n_classes, dtype=np.int64),
        )


def select_candidates(snapshot: QueueSnapshot, protos: np.ndarray, k: int) -> list[np.ndarray]:
    """Entry ids of the ``min(k, |Q|)`` queue features closest to each prototype.

    Similarity is the dot product of unit vectors (cosine). Equal
    similarities go to the more recent entry. Returns one id array per
    class, ordered from most to least similar.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    n_classes = protos.shape[0]
    if snapshot.size == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(n_classes)]
    sims = protos @ snapshot.features.T
    take = min(k, snapshot.size)
    ids = snapshot.entry_ids
    out = []
    for row in sims:
        # lexsort: last key is primary
        order = np.lexsort((-ids, -row))[:take]
        out.append(ids[order])
    return out


def assign(
    batch_probs: np.ndarray,
    batch_entry_ids: np.ndarray,
    candidate_sets: list[np.ndarray],
    conf_threshold: float = 0.9,
) -> PseudoDecision:
    """Mask = (own entry in some prototype's kNN set) and (max p' >= threshold)."""
    batch_probs = np.asarray(batch_probs)
    n_classes = batch_probs.shape[1]
    union = np.concatenate(candidate_sets) if candidate_sets else np.zeros(0, dtype=np.int64)
    in_knn = np.isin(batch_entry_ids, union)
    confident = batch_probs.max(axis=1) >= conf_threshold
    mask = in_knn & confident
    labels = np.where(mask, batch_probs.argmax(axis=1), -1)
    counts = np.array([len(s) for s in candidate_sets], dtype=np.int64) if candidate_sets else np.zeros(n_classes, dtype=np.int64)
    return PseudoDecision(mask, labels.astype(np.int64), counts)


def assign_by_confidence(batch_probs: np.ndarray, conf_threshold: float = 0.9) -> PseudoDecision:
    """Threshold-only pseudo-labels (no kNN gate); the unbalanced reference strategy."""
    batch_probs = np.asarray(batch_probs)
    mask = batch_probs.max(axis=1) >= conf_threshold
    labels = np.where(mask, batch_probs.argmax(axis=1), -1)
    return PseudoDecision(mask, labels.astype(np.int64), np.zeros(batch_probs.shape[1], dtype=np.int64))
