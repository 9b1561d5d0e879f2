"""The five training objectives and their weighted combination.

All losses are means of -log softmax-probability terms over cosine
similarities (inputs are unit-norm rows, so dot product == cosine):

* supervised contrastive loss over labeled + reliable-pseudo rows,
* instance-level NT-Xent over the remaining unlabeled rows,
* cluster-level NT-Xent over normalized probability columns,
* cross-entropy of the cluster head against (pseudo-)labels,
* prototype-level NT-Xent over per-cluster aggregate features.

Each function accepts plain arrays or graph nodes and returns a scalar graph
node, so values and gradients come from the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .exceptions import (
    EmptyBatchError,
    LabelOutOfRangeError,
    TooFewClustersError,
    ZeroColumnError,
)
from .linalg import ZERO_NORM_EPS

LOSS_NAMES = ("scl", "ilcl", "ce", "clcl", "pcl")

# log argument floor in the cross-entropy term
CE_PROB_FLOOR = 1e-12

# supervision kinds
UNLABELED = 0
LABELED = 1
RELIABLE_PSEUDO = 2


@dataclass(frozen=True)
class LossConfig:
    """Temperature and per-term weights (all default to 1, matching the
    equal-weight combination used throughout).

    ``scl_pool`` chooses the supervised contrast pool: "augmented" stacks both
    views (2N rows, the default, mirroring the unsupervised pool), "single"
    uses the primary view only (N rows).
    """

    tau: float = 0.5
    weights: Mapping[str, float] = field(
        default_factory=lambda: {name: 1.0 for name in LOSS_NAMES}
    )
    scl_pool: str = "augmented"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        unknown = set(self.weights) - set(LOSS_NAMES)
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        if self.scl_pool not in ("augmented", "single"):
            raise ValueError(f"scl_pool must be 'augmented' or 'single', got {self.scl_pool!r}")

    def weight(self, name: str) -> float:
        return float(self.weights.get(name, 1.0))


class SupervisionMask:
    """Per-sample supervision: ground-truth label, reliable pseudo-label, or
    unlabeled. Stored as parallel arrays (kind code, class index; class is -1
    where unsupervised)."""

    def __init__(self, kinds, classes):
        self.kinds = np.asarray(kinds, dtype=np.int8)
        self.classes = np.asarray(classes, dtype=np.int64)
        if self.kinds.shape != self.classes.shape or self.kinds.ndim != 1:
            raise ValueError("kinds and classes must be equal-length 1-D arrays")
        if np.any((self.kinds == UNLABELED) & (self.classes >= 0)):
            raise ValueError("unlabeled entries must carry class -1")
        if np.any((self.kinds != UNLABELED) & (self.classes < 0)):
            raise ValueError("supervised entries must carry a class index")

    def __len__(self) -> int:
        return self.kinds.shape[0]

    @classmethod
    def from_labels(cls, labels) -> "SupervisionMask":
        """Build from an int vector using -1 for unlabeled (ground truth only)."""
        labels = np.asarray(labels, dtype=np.int64)
        kinds = np.where(labels >= 0, LABELED, UNLABELED).astype(np.int8)
        return cls(kinds, np.where(labels >= 0, labels, -1))

    @property
    def supervised(self) -> np.ndarray:
        return self.kinds != UNLABELED

    @property
    def unlabeled(self) -> np.ndarray:
        return self.kinds == UNLABELED

    def supervised_indices(self) -> np.ndarray:
        return np.flatnonzero(self.supervised)

    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.unlabeled)

    def take(self, idx) -> "SupervisionMask":
        idx = np.asarray(idx, dtype=np.intp)
        return SupervisionMask(self.kinds[idx], self.classes[idx])

    def n_reliable(self) -> int:
        return int(np.sum(self.kinds == RELIABLE_PSEUDO))

    def check_classes(self, n_clusters: int) -> None:
        sup = self.supervised
        if np.any(self.classes[sup] >= n_clusters):
            raise LabelOutOfRangeError(
                f"class index >= {n_clusters} in supervision mask"
            )


# --- shared NT-Xent machinery ---------------------------------------------------


def _log_offdiag_denominators(S: ad.Var) -> ad.Var:
    """log sum_{k != i} exp(S_ik) per row, with a detached per-row max shift.

    The shift changes neither value nor gradient; it only prevents overflow
    for small temperatures.
    """
    m = S.value.shape[0]
    off = 1.0 - np.eye(m)
    # max over off-diagonal entries only (every row has >= 1 with m >= 2)
    masked = np.where(off > 0, S.value, -np.inf)
    shift = masked.max(axis=1, keepdims=True)
    e = ad.mul(ad.vexp(ad.add(S, -shift)), off)
    return ad.add(ad.vlog(ad.vsum(e, axis=1)), shift[:, 0])


def _twin_ntxent(pool: ad.Var, tau: float) -> ad.Var:
    """Mean NT-Xent over a pool of 2K rows where row i's positive is row
    (i + K) mod 2K."""
    m = pool.value.shape[0]
    k = m // 2
    S = ad.matmul(pool, ad.transpose(pool)) * (1.0 / tau)
    pos = np.zeros((m, m))
    idx = np.arange(m)
    pos[idx, (idx + k) % m] = 1.0
    pos_sim = ad.vsum(ad.mul(S, pos), axis=1)
    per_anchor = _log_offdiag_denominators(S) - pos_sim
    return ad.vsum(per_anchor) * (1.0 / m)


# --- losses -------------------------------------------------------------------------


def scl_loss(F, F_aug, mask: SupervisionMask, tau: float, pool: str = "augmented") -> ad.Var:
    """Supervised contrastive loss over labeled + reliable-pseudo rows.

    Positives of an anchor are the same-class entries of the pool (excluding
    the anchor itself). Anchors without positives contribute nothing; the
    result is the mean over anchors that have at least one. With
    pool="augmented" the pool is the 2N stacked rows [F; F_aug] of
    participating samples, so each anchor's own second view counts as a
    positive; "single" restricts to the N primary rows.
    """
    F, F_aug = ad.as_var(F), ad.as_var(F_aug)
    sup = mask.supervised_indices()
    if sup.size == 0:
        raise EmptyBatchError("supervised contrastive loss needs supervised samples")
    labels = mask.classes[sup]
    if pool == "augmented":
        P = ad.concat_rows([ad.gather_rows(F, sup), ad.gather_rows(F_aug, sup)])
        labels = np.concatenate([labels, labels])
    elif pool == "single":
        P = ad.gather_rows(F, sup)
    else:
        raise ValueError(f"unknown pool {pool!r}")

    m = P.value.shape[0]
    if m < 2:
        return ad.zero_scalar()
    same = labels[:, None] == labels[None, :]
    pos_mask = (same & ~np.eye(m, dtype=bool)).astype(np.float64)
    counts = pos_mask.sum(axis=1)
    valid = counts > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        return ad.zero_scalar()

    S = ad.matmul(P, ad.transpose(P)) * (1.0 / tau)
    mean_pos = ad.vsum(ad.mul(S, pos_mask), axis=1) * (1.0 / np.maximum(counts, 1.0))
    per_anchor = ad.mul(_log_offdiag_denominators(S) - mean_pos, valid.astype(np.float64))
    return ad.vsum(per_anchor) * (1.0 / n_valid)


def ilcl_loss(F, F_aug, mask: SupervisionMask, tau: float) -> ad.Var:
    """Instance-level NT-Xent over the unlabeled rows and their second views."""
    F, F_aug = ad.as_var(F), ad.as_var(F_aug)
    unl = mask.unlabeled_indices()
    if unl.size == 0:
        raise EmptyBatchError("instance-level contrastive loss needs unlabeled samples")
    P = ad.concat_rows([ad.gather_rows(F, unl), ad.gather_rows(F_aug, unl)])
    return _twin_ntxent(P, tau)


def clcl_loss(G, G_aug, columns, tau: float) -> ad.Var:
    """Cluster-level NT-Xent over L2-normalized probability columns.

    Each selected column of G is an anchor whose positive is the same column
    of the augmented view; the pool holds the 2K column vectors.
    """
    G, G_aug = ad.as_var(G), ad.as_var(G_aug)
    columns = np.asarray(columns, dtype=np.intp)
    if columns.size < 2:
        raise TooFewClustersError(f"need >= 2 columns, got {columns.size}")
    cols = ad.transpose(ad.gather_cols(G, columns))
    cols_aug = ad.transpose(ad.gather_cols(G_aug, columns))
    for name, c in (("G", cols), ("G_aug", cols_aug)):
        norms = np.linalg.norm(c.value, axis=1)
        if np.any(norms <= ZERO_NORM_EPS):
            dead = columns[int(np.argmax(norms <= ZERO_NORM_EPS))]
            raise ZeroColumnError(f"column {dead} of {name} is all-zero")
    P = ad.concat_rows([ad.l2_normalize_rows(cols), ad.l2_normalize_rows(cols_aug)])
    return _twin_ntxent(P, tau)


def ce_loss(G, mask: SupervisionMask) -> ad.Var:
    """Mean -log G[i, y_i] over labeled + reliable-pseudo rows; probabilities
    are floored at 1e-12 inside the log."""
    G = ad.as_var(G)
    sup = mask.supervised_indices()
    if sup.size == 0:
        raise EmptyBatchError("cross-entropy needs supervised samples")
    k = G.value.shape[1]
    classes = mask.classes[sup]
    if np.any(classes >= k):
        raise LabelOutOfRangeError(f"class index >= {k} in cross-entropy targets")
    onehot = np.zeros((sup.size, k))
    onehot[np.arange(sup.size), classes] = 1.0
    picked = ad.vsum(ad.mul(ad.gather_rows(G, sup), onehot), axis=1)
    return ad.vsum(ad.vlog(ad.clip_min(picked, CE_PROB_FLOOR))) * (-1.0 / sup.size)


def pcl_loss(protos, protos_aug, tau: float) -> ad.Var:
    """Prototype-level NT-Xent: each cluster prototype against its augmented
    counterpart, negatives being every other prototype in the 2K pool.

    Accepts PrototypeMatrix pairs (active rows are used; the pair must share
    an active set) or raw unit-row matrices.
    """
    a = _proto_rows(protos)
    b = _proto_rows(protos_aug)
    if a.value.shape[0] != b.value.shape[0]:
        raise TooFewClustersError("prototype views have different active cluster counts")
    if a.value.shape[0] < 2:
        raise TooFewClustersError(f"need >= 2 prototypes, got {a.value.shape[0]}")
    return _twin_ntxent(ad.concat_rows([a, b]), tau)


def _proto_rows(p) -> ad.Var:
    rows = getattr(p, "active_rows", None)
    if rows is not None:
        return ad.as_var(rows)
    return ad.as_var(p)


def total_loss(parts: Mapping[str, ad.Var | None], config: LossConfig) -> ad.Var:
    """Weighted sum of the present terms; absent terms count as exact zeros."""
    total = ad.zero_scalar()
    for name in LOSS_NAMES:
        part = parts.get(name)
        if part is None:
            continue
        total = ad.add(total, ad.mul(ad.as_var(part), config.weight(name)))
    return total
