"""Clustering evaluation: Hungarian-aligned accuracy, ARI, NMI, confusion
tables, and cluster-count estimation by over-clustering.

Label vectors may use arbitrary non-negative ids; everything is computed from
the contingency table, so both metrics and accuracy are invariant under
relabeling either side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .exceptions import LengthMismatchError, TooFewSamplesError


def _check_pair(truth, predicted) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.ndim != 1 or p.ndim != 1 or t.shape != p.shape:
        raise LengthMismatchError(f"truth {t.shape} vs predicted {p.shape}")
    if t.size == 0:
        raise LengthMismatchError("empty labelings")
    if t.min() < 0 or p.min() < 0:
        raise LengthMismatchError("labels must be non-negative")
    return t, p


def contingency(truth, predicted) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts[ti, pj] plus the distinct truth and predicted ids, sorted."""
    t, p = _check_pair(truth, predicted)
    t_ids, t_inv = np.unique(t, return_inverse=True)
    p_ids, p_inv = np.unique(p, return_inverse=True)
    table = np.zeros((t_ids.size, p_ids.size), dtype=np.int64)
    np.add.at(table, (t_inv, p_inv), 1)
    return table, t_ids, p_ids


def hungarian_accuracy(truth, predicted) -> tuple[float, dict[int, int]]:
    """Best one-to-one cluster-to-class accuracy and the mapping achieving it.

    The contingency table is padded square with zero-weight dummies so any
    cluster/class count imbalance is handled; maximization runs as negated-cost
    assignment. The mapping sends predicted cluster ids to truth class ids
    (only pairs where both sides are real).
    """
    table, t_ids, p_ids = contingency(truth, predicted)
    side = max(table.shape)
    padded = np.zeros((side, side), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(-padded)
    matched = padded[rows, cols].sum()
    mapping = {
        int(p_ids[c]): int(t_ids[r])
        for r, c in zip(rows, cols)
        if r < t_ids.size and c < p_ids.size
    }
    n = np.asarray(truth).size
    return float(matched) / float(n), mapping


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel by first appearance so partitions compare structurally."""
    _, inv = np.unique(labels, return_inverse=True)
    seen: dict[int, int] = {}
    out = np.empty_like(inv)
    for i, v in enumerate(inv):
        out[i] = seen.setdefault(int(v), len(seen))
    return out


def _same_partition(truth, predicted) -> bool:
    t, p = _check_pair(truth, predicted)
    return bool(np.array_equal(_canonical(t), _canonical(p)))


def adjusted_rand_index(truth, predicted) -> float:
    """ARI from pairwise contingency counts.

    A zero denominator (e.g. both sides all-singletons or both one cluster)
    yields 1 when the partitions coincide and 0 otherwise.
    """
    t, p = _check_pair(truth, predicted)
    if t.size < 2:
        raise TooFewSamplesError("ARI needs at least 2 samples")
    table, _, _ = contingency(t, p)
    n = t.size

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table.astype(np.float64)).sum()
    sum_rows = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_cols = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    denom = max_index - expected
    if denom == 0.0:
        return 1.0 if _same_partition(t, p) else 0.0
    return float((sum_cells - expected) / denom)


def normalized_mutual_info(truth, predicted, average: str = "geometric") -> float:
    """NMI with natural logs; the default normalizer is the geometric mean of
    the two entropies ("arithmetic" is available for cross-checking).

    When either side has zero entropy the score is 1 for identical partitions
    and 0 otherwise.
    """
    if average not in ("geometric", "arithmetic"):
        raise ValueError(f"average must be 'geometric' or 'arithmetic', got {average!r}")
    t, p = _check_pair(truth, predicted)
    table, _, _ = contingency(t, p)
    n = float(t.size)
    joint = table / n
    pt = joint.sum(axis=1)
    pp = joint.sum(axis=0)

    def entropy(dist):
        nz = dist[dist > 0]
        return float(-(nz * np.log(nz)).sum())

    h_t, h_p = entropy(pt), entropy(pp)
    if h_t == 0.0 or h_p == 0.0:
        return 1.0 if _same_partition(t, p) else 0.0
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            if joint[i, j] > 0:
                mi += joint[i, j] * math.log(joint[i, j] / (pt[i] * pp[j]))
    norm = math.sqrt(h_t * h_p) if average == "geometric" else 0.5 * (h_t + h_p)
    return float(mi / norm)


def confusion_table(truth, predicted, mapping: dict[int, int]) -> tuple[np.ndarray, list[int], list[int]]:
    """Contingency table with columns ordered by the Hungarian mapping.

    Rows are truth classes (sorted ids); the column for each truth class is
    the cluster mapped to it, so a perfect prediction is diagonal. Unmatched
    clusters trail in sorted order. Returns (table, row ids, column ids).
    """
    table, t_ids, p_ids = contingency(truth, predicted)
    inverse = {cls: cluster for cluster, cls in mapping.items()}
    ordered: list[int] = [inverse[c] for c in t_ids if c in inverse]
    ordered += [int(c) for c in p_ids if int(c) not in set(ordered)]
    col_pos = {int(c): j for j, c in enumerate(p_ids)}
    out = table[:, [col_pos[c] for c in ordered]]
    return out, [int(c) for c in t_ids], ordered


def estimate_k(F, k_cap: int, rho: float = 0.9, seed: int = 0) -> int:
    """Estimate the cluster count by over-clustering and dropping small ones.

    Runs k-means with ``k_cap`` centers (k-means++ seeding, 10 restarts keeping
    the best inertia, 100 iterations) and counts clusters of size at least
    rho * n / k_cap; the estimate is never below 1.
    """
    F = np.asarray(F, dtype=np.float64)
    if k_cap < 2:
        raise ValueError(f"k_cap must be >= 2, got {k_cap}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    n = F.shape[0]
    if n < k_cap:
        raise TooFewSamplesError(f"need >= {k_cap} samples, got {n}")
    km = KMeans(
        n_clusters=k_cap,
        init="k-means++",
        n_init=10,
        max_iter=100,
        random_state=seed,
    ).fit(F)
    sizes = np.bincount(km.labels_, minlength=k_cap)
    threshold = rho * (n / k_cap)
    return max(1, int(np.sum(sizes >= threshold)))


@dataclass
class MetricsReport:
    acc: float
    ari: float
    nmi: float
    k_pred: int | None = None
    confusion: np.ndarray | None = None
    confusion_rows: list[int] = field(default_factory=list)
    confusion_cols: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {"acc": self.acc, "ari": self.ari, "nmi": self.nmi}
        if self.k_pred is not None:
            out["k_pred"] = self.k_pred
        return out


def clustering_report(truth, predicted) -> MetricsReport:
    """ACC (Hungarian), ARI, and NMI plus the aligned confusion table."""
    acc, mapping = hungarian_accuracy(truth, predicted)
    table, rows, cols = confusion_table(truth, predicted, mapping)
    return MetricsReport(
        acc=acc,
        ari=adjusted_rand_index(truth, predicted),
        nmi=normalized_mutual_info(truth, predicted),
        confusion=table,
        confusion_rows=rows,
        confusion_cols=cols,
    )
