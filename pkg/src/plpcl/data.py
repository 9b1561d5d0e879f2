"""Dataset ingestion, task-setting splits, and synthetic benchmarks.

Datasets are JSON-lines files: one record per line with fields
``{"id": str, "embedding": [float, ...], "label": str | null, "split":
"train" | "dev" | "test"}``. The class space is derived from content: classes
with at least one labeled training record are the known (in-domain) block,
everything else observed is the unknown (out-of-domain) block. Integer class
indices are assigned lexicographically within each block, known block first,
which keeps the cluster-head layout (known columns then unknown columns)
stable across runs and tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimMismatchError,
    InvalidParamsError,
    NoClassesError,
    ParseError,
    UnknownSplitError,
)
from .seeding import TAG_SPLIT, TAG_SYNTH, rng_for

SPLITS = ("train", "dev", "test")


@dataclass
class Record:
    id: str
    embedding: np.ndarray
    label: str | None
    split: str


@dataclass
class EmbeddingDataset:
    records: list[Record]
    known_classes: tuple[str, ...] = ()
    unknown_classes: tuple[str, ...] = ()
    derived: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not self.known_classes and not self.unknown_classes:
            self._derive_label_space()
            self.derived = True

    def _derive_label_space(self) -> None:
        labeled_train = {
            r.label for r in self.records if r.split == "train" and r.label is not None
        }
        everything = {r.label for r in self.records if r.label is not None}
        self.known_classes = tuple(sorted(labeled_train))
        self.unknown_classes = tuple(sorted(everything - labeled_train))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int | None:
        return int(self.records[0].embedding.shape[0]) if self.records else None

    @property
    def class_index(self) -> dict[str, int]:
        """Known classes first (sorted), then unknown classes (sorted)."""
        ordered = [*self.known_classes, *self.unknown_classes]
        return {name: i for i, name in enumerate(ordered)}

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.records))
        return np.array(
            [i for i, r in enumerate(self.records) if r.split == split], dtype=np.int64
        )

    def embedding_matrix(self, idx=None) -> np.ndarray:
        idx = self.indices() if idx is None else np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return np.zeros((0, self.dim or 0))
        return np.stack([self.records[i].embedding for i in idx])

    def int_labels(self, idx=None) -> np.ndarray:
        """Class index per record, -1 where unlabeled."""
        idx = self.indices() if idx is None else np.asarray(idx, dtype=np.int64)
        cmap = self.class_index
        return np.array(
            [cmap[self.records[i].label] if self.records[i].label is not None else -1 for i in idx],
            dtype=np.int64,
        )


def _parse_line(line: str, lineno: int, expected_dim: int | None) -> Record:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(lineno, f"invalid JSON: {e.msg}") from e
    if not isinstance(obj, dict):
        raise ParseError(lineno, "record must be a JSON object")
    for key in ("id", "embedding", "split"):
        if key not in obj:
            raise ParseError(lineno, f"missing field {key!r}")
    if not isinstance(obj["id"], str):
        raise ParseError(lineno, "field 'id' must be a string")
    emb = obj["embedding"]
    if not isinstance(emb, list) or not emb or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb
    ):
        raise ParseError(lineno, "field 'embedding' must be a non-empty number list")
    split = obj["split"]
    if split not in SPLITS:
        raise UnknownSplitError(f"line {lineno}: split must be one of {SPLITS}, got {split!r}")
    label = obj.get("label")
    if label is not None and not isinstance(label, str):
        raise ParseError(lineno, "field 'label' must be a string or null")
    if expected_dim is not None and len(emb) != expected_dim:
        raise DimMismatchError(lineno, f"embedding has {len(emb)} dims, expected {expected_dim}")
    return Record(
        id=obj["id"],
        embedding=np.asarray(emb, dtype=np.float64),
        label=label,
        split=split,
    )


def load_dataset(path) -> EmbeddingDataset:
    """Parse a JSONL dataset, validating per line; the class space is derived
    from which classes carry labeled training records."""
    records: list[Record] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_line(line, lineno, dim)
            if dim is None:
                dim = int(rec.embedding.shape[0])
            records.append(rec)
    return EmbeddingDataset(records)


def save_dataset(data: EmbeddingDataset, path) -> None:
    """Write JSONL; float serialization round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in data.records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "embedding": r.embedding.tolist(),
                        "label": r.label,
                        "split": r.split,
                    }
                )
            )
            fh.write("\n")


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a fully labeled dataset into a discovery task.

    ``ood_class_ratio`` of the classes (rounded up, seeded choice) become
    unknown and lose their training labels. In the open setting a further
    (1 - labeled_ratio) share of each known class's training records is
    unlabeled; the ood setting keeps every known training record labeled.
    """

    ood_class_ratio: float = 0.3
    labeled_ratio: float = 1.0
    setting: str = "ood"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ood_class_ratio <= 1.0:
            raise InvalidParamsError(f"ood_class_ratio must be in [0,1], got {self.ood_class_ratio}")
        if not 0.0 <= self.labeled_ratio <= 1.0:
            raise InvalidParamsError(f"labeled_ratio must be in [0,1], got {self.labeled_ratio}")
        if self.setting not in ("ood", "open"):
            raise InvalidParamsError(f"setting must be 'ood' or 'open', got {self.setting!r}")


def apply_split(data: EmbeddingDataset, spec: SplitSpec) -> EmbeddingDataset:
    """Select unknown classes and strip the corresponding training labels.

    Deterministic in (data, spec). Unknown-class training records always lose
    their labels; dev/test records keep them for evaluation only.
    """
    classes = sorted({r.label for r in data.records if r.label is not None})
    if not classes:
        raise NoClassesError("dataset has no labeled records to split")
    n_unknown = int(np.ceil(spec.ood_class_ratio * len(classes)))
    if n_unknown == 0:
        raise NoClassesError("split selects no unknown classes")
    if n_unknown >= len(classes):
        raise NoClassesError("split leaves no known classes")
    rng = rng_for(spec.seed, TAG_SPLIT)
    order = rng.permutation(len(classes))
    unknown = {classes[i] for i in order[:n_unknown]}
    known = [c for c in classes if c not in unknown]

    labeled_ratio = 1.0 if spec.setting == "ood" else spec.labeled_ratio
    keep_labeled: set[int] = set()
    if labeled_ratio < 1.0:
        for cls in known:
            members = [
                i
                for i, r in enumerate(data.records)
                if r.split == "train" and r.label == cls
            ]
            n_keep = max(1, int(round(labeled_ratio * len(members))))
            pick = rng.permutation(len(members))[:n_keep]
            keep_labeled.update(members[j] for j in pick)

    out: list[Record] = []
    for i, r in enumerate(data.records):
        label = r.label
        if r.split == "train" and label is not None:
            if label in unknown:
                label = None
            elif labeled_ratio < 1.0 and i not in keep_labeled:
                label = None
        out.append(Record(id=r.id, embedding=r.embedding.copy(), label=label, split=r.split))
    return EmbeddingDataset(
        out,
        known_classes=tuple(known),
        unknown_classes=tuple(sorted(unknown)),
    )


def synth_mixture(
    n_classes: int,
    dim: int,
    n_per_class: int,
    separation: float,
    noise_sigma: float,
    seed: int,
) -> EmbeddingDataset:
    """Gaussian mixture benchmark with controlled class separation.

    Class means sit on a scaled random near-orthonormal frame with minimum
    pairwise distance separation * noise_sigma; samples add isotropic noise.
    Each class is split 80/10/10 into train/dev/test in generation order.
    """
    if n_classes < 2 or dim < 2:
        raise InvalidParamsError("need n_classes >= 2 and dim >= 2")
    if separation <= 0 or noise_sigma <= 0:
        raise InvalidParamsError("separation and noise_sigma must be > 0")
    if n_per_class < 3:
        raise InvalidParamsError("need n_per_class >= 3 for an 80/10/10 split")

    rng = rng_for(seed, TAG_SYNTH)
    raw = rng.standard_normal((n_classes, dim))
    if n_classes <= dim:
        q, _ = np.linalg.qr(raw.T)
        means = q.T[:n_classes]
    else:
        means = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    min_dist = dists[~np.eye(n_classes, dtype=bool)].min()
    means = means * (separation * noise_sigma / min_dist)

    n_test = max(1, int(round(0.1 * n_per_class)))
    n_dev = max(1, int(round(0.1 * n_per_class)))
    n_train = n_per_class - n_dev - n_test

    width = len(str(n_classes - 1))
    records: list[Record] = []
    for c in range(n_classes):
        name = f"class_{c:0{width}d}"
        samples = means[c] + noise_sigma * rng.standard_normal((n_per_class, dim))
        for j in range(n_per_class):
            split = "train" if j < n_train else ("dev" if j < n_train + n_dev else "test")
            records.append(
                Record(
                    id=f"{name}-{j:04d}",
                    embedding=samples[j],
                    label=name,
                    split=split,
                )
            )
    return EmbeddingDataset(records)
