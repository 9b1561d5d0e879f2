"""Per-batch cluster prototypes.

A prototype is the aggregate instance feature of a cluster: transpose the
assignment matrix against the feature matrix and L2-normalize each row.
Assignment rows are one-hot for labeled and reliable-pseudo samples (hard) and
raw cluster probabilities for everything else (soft). Clusters that draw no
mass in a batch are flagged stale and sit out the prototype loss for that step
instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import LabelOutOfRangeError, ShapeMismatchError
from .linalg import ZERO_NORM_EPS
from .losses import SupervisionMask


@dataclass
class PrototypeMatrix:
    """K row-normalized cluster centers; stale rows are zero vectors.

    ``active_rows`` holds the normalized non-stale rows (a graph node when the
    inputs were graph nodes) for use in the prototype contrastive loss.
    """

    vectors: np.ndarray  # (K, m), unit rows where active, zeros where stale
    stale: np.ndarray  # (K,) bool
    active_index: np.ndarray  # indices of non-stale rows
    active_rows: object  # (A, m) Var or ndarray

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_active(self) -> int:
        return int(self.active_index.size)


def build_assignment_matrix(G, mask: SupervisionMask):
    """Hard/soft combined assignment matrix.

    Row i is one-hot at the (pseudo-)label when sample i is supervised and the
    unchanged probability row of G otherwise. Returns the same kind (graph
    node or ndarray) as G.
    """
    is_var = isinstance(G, ad.Var)
    value = G.value if is_var else np.asarray(G, dtype=np.float64)
    n, k = value.shape
    if len(mask) != n:
        raise ShapeMismatchError(f"mask length {len(mask)} != batch size {n}")
    sup = mask.supervised
    classes = mask.classes
    if np.any(classes[sup] >= k):
        raise LabelOutOfRangeError(f"supervision class index >= {k}")

    soft_rows = (~sup).astype(np.float64)[:, None]
    hard = np.zeros((n, k))
    sup_idx = np.flatnonzero(sup)
    hard[sup_idx, classes[sup_idx]] = 1.0
    if is_var:
        return ad.add(ad.mul(G, soft_rows), hard)
    return value * soft_rows + hard


def _prototype_sums(G_hat, F) -> ad.Var:
    """Unnormalized prototypes: assignment-transpose times features."""
    G_hat, F = ad.as_var(G_hat), ad.as_var(F)
    if G_hat.value.shape[0] != F.value.shape[0]:
        raise ShapeMismatchError(
            f"assignment rows {G_hat.value.shape} != feature rows {F.value.shape}"
        )
    return ad.matmul(ad.transpose(G_hat), F)


def _finalize(M: ad.Var, stale: np.ndarray, was_var: bool) -> PrototypeMatrix:
    k, m = M.value.shape
    active_index = np.flatnonzero(~stale)
    vectors = np.zeros((k, m))
    if active_index.size:
        rows = ad.l2_normalize_rows(ad.gather_rows(M, active_index))
        vectors[active_index] = rows.value
        active_rows = rows if was_var else rows.value
    else:
        active_rows = np.zeros((0, m))
    return PrototypeMatrix(
        vectors=vectors,
        stale=stale,
        active_index=active_index,
        active_rows=active_rows,
    )


def compute_prototypes(G_hat, F) -> PrototypeMatrix:
    """Aggregate features per cluster and normalize each center.

    Rows whose pre-normalization norm is <= 1e-12 are flagged stale (zero
    vectors, excluded from ``active_rows``) rather than raising; small batches
    routinely miss classes early in training.
    """
    was_var = isinstance(G_hat, ad.Var) or isinstance(F, ad.Var)
    M = _prototype_sums(G_hat, F)
    stale = np.linalg.norm(M.value, axis=1) <= ZERO_NORM_EPS
    return _finalize(M, stale, was_var)


def prototype_pair(batch, mask: SupervisionMask) -> tuple[PrototypeMatrix, PrototypeMatrix]:
    """Prototypes for both views of a batch under one supervision mask.

    Hard assignment rows are identical across views; soft rows use each view's
    own probabilities. A cluster stale in either view is excluded from both,
    so the two active sets always align for the prototype loss.
    """
    was_var = any(isinstance(x, ad.Var) for x in (batch.G, batch.F, batch.G_aug, batch.F_aug))
    M = _prototype_sums(build_assignment_matrix(batch.G, mask), batch.F)
    M_aug = _prototype_sums(build_assignment_matrix(batch.G_aug, mask), batch.F_aug)
    stale = (np.linalg.norm(M.value, axis=1) <= ZERO_NORM_EPS) | (
        np.linalg.norm(M_aug.value, axis=1) <= ZERO_NORM_EPS
    )
    return _finalize(M, stale, was_var), _finalize(M_aug, stale, was_var)
