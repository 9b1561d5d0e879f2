"""Confidence-thresholded pseudo-label selection.

An unlabeled sample's pseudo-label is the argmax of its cluster-probability
row; it is reliable when the max probability strictly exceeds the threshold
sigma. Reliable samples join the supervised pool for the next epoch, so the
supervision signal grows as the model sharpens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ConflictingSupervisionError, IndexOutOfRangeError
from .linalg import as_matrix
from .losses import LABELED, RELIABLE_PSEUDO, UNLABELED, SupervisionMask


@dataclass
class PseudoLabelSet:
    """Predicted class, confidence, and reliability flag per unlabeled sample."""

    indices: np.ndarray  # sample indices the entries refer to
    classes: np.ndarray  # argmax class per entry
    confidence: np.ndarray  # max probability per entry
    reliable: np.ndarray  # confidence > sigma
    sigma: float

    @property
    def n_reliable(self) -> int:
        return int(self.reliable.sum())

    def reliable_indices(self) -> np.ndarray:
        return self.indices[self.reliable]


def select(G, unlabeled_indices, sigma: float) -> PseudoLabelSet:
    """Threshold the cluster-head rows of the given samples.

    Ties at the max go to the lowest class index; reliability uses a strict
    comparison, so sigma=1 selects nothing and sigma=0 selects everything.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    G = as_matrix(G, "G")
    idx = np.asarray(unlabeled_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= G.shape[0]):
        raise IndexOutOfRangeError(f"sample index outside 0..{G.shape[0] - 1}")
    rows = G[idx]
    classes = rows.argmax(axis=1) if idx.size else np.zeros(0, dtype=np.int64)
    confidence = rows.max(axis=1) if idx.size else np.zeros(0)
    return PseudoLabelSet(
        indices=idx,
        classes=classes.astype(np.int64),
        confidence=confidence,
        reliable=confidence > sigma,
        sigma=float(sigma),
    )


def refresh_mask(n: int, labeled_indices, labeled_classes, pseudo: PseudoLabelSet) -> SupervisionMask:
    """Merge ground truth with reliable pseudo-labels into one mask.

    Ground truth and pseudo-label index sets must be disjoint; a sample with a
    real label never receives a pseudo one.
    """
    labeled_indices = np.asarray(labeled_indices, dtype=np.int64)
    labeled_classes = np.asarray(labeled_classes, dtype=np.int64)
    overlap = np.intersect1d(labeled_indices, pseudo.indices)
    if overlap.size:
        raise ConflictingSupervisionError(
            f"samples {overlap[:5].tolist()} have both a label and a pseudo-label"
        )
    kinds = np.full(n, UNLABELED, dtype=np.int8)
    classes = np.full(n, -1, dtype=np.int64)
    kinds[labeled_indices] = LABELED
    classes[labeled_indices] = labeled_classes
    rel = pseudo.reliable
    kinds[pseudo.indices[rel]] = RELIABLE_PSEUDO
    classes[pseudo.indices[rel]] = pseudo.classes[rel]
    return SupervisionMask(kinds, classes)


def reliability_stats(history: Sequence[PseudoLabelSet]) -> list[int]:
    """Reliable-sample count per epoch, for the training log."""
    return [entry.n_reliable for entry in history]
