"""Two-stage training.

Stage 1 pretrains on labeled in-domain samples with the supervised
contrastive loss plus cross-entropy; the cluster head spans known and new
columns from the start so nothing is re-initialized later. Stage 2 loops
three steps per epoch: refresh confidence-filtered pseudo-labels over the
unlabeled pool, run semi-supervised contrastive learning on shuffled mixed
batches (supervised terms for labeled + reliable rows, instance-level
contrast for the rest, cluster-level contrast on the setting's column
subset), and pull cluster prototypes apart with the prototype loss.

The whole path is a pure function of (data, config); every stochastic draw
derives from the config seed, so runs repeat bit-for-bit and a checkpointed
state resumes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import EmbeddingDataset
from .exceptions import (
    ClassCountMismatchError,
    DimsMismatchError,
    EmptyBatchError,
    InvalidParamsError,
    NoClassesError,
    NoLabeledDataError,
)
from .losses import (
    LOSS_NAMES,
    LossConfig,
    SupervisionMask,
    ce_loss,
    clcl_loss,
    ilcl_loss,
    pcl_loss,
    scl_loss,
    total_loss,
)
from .model import (
    BatchTensors,
    ModelDims,
    ModelParams,
    ParamLeaves,
    augmented_views_graph,
    forward,
    init_params,
    params_from_json,
    params_to_json,
)
from .prototypes import prototype_pair
from .pseudo_labels import PseudoLabelSet, refresh_mask, select
from .seeding import (
    TAG_PRETRAIN_BATCH,
    TAG_PRETRAIN_SHUFFLE,
    TAG_TRAIN_BATCH,
    TAG_TRAIN_SHUFFLE,
    derive_seed,
    rng_for,
)

EpochCallback = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both stages.

    Defaults follow the reference configuration (threshold 0.99, unit loss
    weights, pretraining rate 5e-5, training rate 3e-4, batch 128, dropout
    0.1, 100 training epochs); desk-scale runs usually shrink epochs and
    raise the learning rates.
    """

    setting: str = "open"  # "ood" or "open"
    sigma: float = 0.99
    tau: float = 0.5
    weights: dict[str, float] = field(
        default_factory=lambda: {name: 1.0 for name in LOSS_NAMES}
    )
    pretrain_lr: float = 5e-5
    train_lr: float = 3e-4
    epochs_pretrain: int = 100
    epochs_train: int = 100
    batch_size: int = 128
    dropout_p: float = 0.1
    seed: int = 1
    k_ind: int | None = None
    k_ood: int | None = None
    hidden_dim: int = 128
    feature_dim: int = 128
    head_hidden: tuple[int, ...] = ()
    grad_clip: float = 5.0
    scl_pool: str = "augmented"

    def __post_init__(self):
        if self.setting not in ("ood", "open"):
            raise InvalidParamsError(f"setting must be 'ood' or 'open', got {self.setting!r}")
        if not (self.pretrain_lr > 0 and self.train_lr > 0):
            raise InvalidParamsError("learning rates must be > 0")
        if self.epochs_pretrain < 0 or self.epochs_train < 0:
            raise InvalidParamsError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise InvalidParamsError("batch_size must be >= 2")
        if not 0.0 <= self.sigma <= 1.0:
            raise InvalidParamsError("sigma must be in [0, 1]")
        if self.k_ind is not None and self.k_ind < 1:
            raise InvalidParamsError("k_ind must be >= 1")
        if self.k_ood is not None and self.k_ood < 1:
            raise InvalidParamsError("k_ood must be >= 1")
        if self.seed < 0:
            raise InvalidParamsError("seed must be >= 0")

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, weights=dict(self.weights), scl_pool=self.scl_pool)


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).

    Zero gradients leave both moments and parameters exactly unchanged.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale the whole gradient set so its global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        return [g * scale for g in grads]
    return grads


@dataclass
class TrainState:
    """Everything needed to continue stage-2 training exactly where it
    stopped: parameters, optimizer moments, completed-epoch counter, and the
    reliable-pseudo-label history."""

    params: ModelParams
    optimizer: Adam
    epoch: int = 0
    pseudo_history: list[PseudoLabelSet] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "params": params_to_json(self.params),
            "optimizer": {
                "lr": self.optimizer.lr,
                "t": self.optimizer.t,
                "m": [m.tolist() for m in (self.optimizer.m or [])],
                "v": [v.tolist() for v in (self.optimizer.v or [])],
            },
            "epoch": self.epoch,
            "reliable_history": [int(p.n_reliable) for p in self.pseudo_history],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainState":
        opt = Adam(lr=float(obj["optimizer"]["lr"]))
        opt.t = int(obj["optimizer"]["t"])
        if obj["optimizer"]["m"]:
            opt.m = [np.asarray(m, dtype=np.float64) for m in obj["optimizer"]["m"]]
            opt.v = [np.asarray(v, dtype=np.float64) for v in obj["optimizer"]["v"]]
        return cls(params=params_from_json(obj["params"]), optimizer=opt, epoch=int(obj["epoch"]))


def _batches(order: np.ndarray, batch_size: int):
    for lo in range(0, order.size, batch_size):
        yield order[lo : lo + batch_size]


def _check_inputs(Z, y) -> tuple[np.ndarray, np.ndarray]:
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if Z.ndim != 2 or y.ndim != 1 or Z.shape[0] != y.shape[0]:
        raise DimsMismatchError(f"inputs {Z.shape} and labels {y.shape} do not align")
    return Z, y


# --- stage 1 ------------------------------------------------------------------


def pretrain_arrays(Z, y, cfg: TrainConfig, dims: ModelDims) -> ModelParams:
    """Supervised pretraining on labeled rows (y >= 0).

    Optimizes the supervised contrastive loss plus cross-entropy with Adam at
    ``cfg.pretrain_lr`` for ``cfg.epochs_pretrain`` epochs, deterministic in
    the config seed.
    """
    Z, y = _check_inputs(Z, y)
    labeled = np.flatnonzero(y >= 0)
    if labeled.size == 0:
        raise NoLabeledDataError("pretraining needs labeled samples")
    k_ind = cfg.k_ind if cfg.k_ind is not None else int(y.max()) + 1
    if int(y.max()) >= k_ind:
        raise ClassCountMismatchError(
            f"labeled class {int(y.max())} outside configured k_ind={k_ind}"
        )
    params = init_params(dims, cfg.seed)
    loss_cfg = cfg.loss_config()
    opt = Adam(cfg.pretrain_lr)
    for epoch in range(cfg.epochs_pretrain):
        order = labeled[rng_for(cfg.seed, TAG_PRETRAIN_SHUFFLE, epoch).permutation(labeled.size)]
        for b, batch_idx in enumerate(_batches(order, cfg.batch_size)):
            leaves = ParamLeaves(params)
            F, G, F_aug, G_aug = augmented_views_graph(
                leaves,
                Z[batch_idx],
                cfg.dropout_p,
                derive_seed(cfg.seed, TAG_PRETRAIN_BATCH, epoch, b),
            )
            mask = SupervisionMask.from_labels(y[batch_idx])
            parts: dict[str, ad.Var] = {}
            if loss_cfg.weight("scl") != 0.0:
                parts["scl"] = scl_loss(F, F_aug, mask, cfg.tau, cfg.scl_pool)
            if loss_cfg.weight("ce") != 0.0:
                parts["ce"] = ce_loss(G, mask)
            if not parts:
                continue
            grads = ad.gradients(total_loss(parts, loss_cfg), leaves.flat())
            opt.step(params.arrays(), clip_gradients(grads, cfg.grad_clip))
    params.lineage.append(
        {
            "stage": "pretrain",
            "seed": int(cfg.seed),
            "epochs": int(cfg.epochs_pretrain),
            "k_ind": int(k_ind),
        }
    )
    return params


# --- stage 2 --------------------------------------------------------------------


def clcl_columns(setting: str, k_ind: int, k_total: int) -> np.ndarray:
    """Cluster-contrast column subset: new-class columns only in the ood
    setting, every column in the open setting."""
    if setting == "ood":
        return np.arange(k_ind, k_total)
    return np.arange(k_total)


def train_arrays(
    Z,
    y,
    cfg: TrainConfig,
    params: ModelParams | None = None,
    state: TrainState | None = None,
    on_epoch: EpochCallback | None = None,
) -> TrainState:
    """Iterative pseudo-label / contrastive / prototype training.

    ``y`` carries ground-truth class indices for labeled rows and -1 for every
    unlabeled row; unlabeled ground truth must not be passed in. Resumes from
    ``state`` (continuing its epoch counter) when given, otherwise starts
    fresh from ``params``.
    """
    Z, y = _check_inputs(Z, y)
    if state is None:
        if params is None:
            raise InvalidParamsError("either params or state is required")
        state = TrainState(params=params.copy(), optimizer=Adam(cfg.train_lr))
    params = state.params
    if Z.shape[1] != params.dims.input_dim:
        raise DimsMismatchError(
            f"inputs of width {Z.shape[1]} vs model input {params.dims.input_dim}"
        )
    k_total = params.dims.n_clusters
    k_ind = cfg.k_ind if cfg.k_ind is not None else (int(y.max()) + 1 if np.any(y >= 0) else 0)
    if cfg.k_ood is not None and k_ind + cfg.k_ood != k_total:
        raise ClassCountMismatchError(
            f"k_ind={k_ind} + k_ood={cfg.k_ood} != cluster head width {k_total}"
        )
    if np.any(y >= k_total):
        raise ClassCountMismatchError(f"label outside the {k_total}-way cluster head")

    labeled_idx = np.flatnonzero(y >= 0)
    unlabeled_idx = np.flatnonzero(y < 0)
    columns = clcl_columns(cfg.setting, k_ind, k_total)
    loss_cfg = cfg.loss_config()
    n = Z.shape[0]

    for epoch in range(state.epoch, cfg.epochs_train):
        # (1) refresh pseudo-labels over the unlabeled pool, dropout off
        _, G_all = forward(params, Z)
        pseudo = select(G_all, unlabeled_idx, cfg.sigma)
        mask_all = refresh_mask(n, labeled_idx, y[labeled_idx], pseudo)
        state.pseudo_history.append(pseudo)

        # (2) shuffled mixed batches
        order = rng_for(cfg.seed, TAG_TRAIN_SHUFFLE, epoch).permutation(n)
        sums = {name: 0.0 for name in LOSS_NAMES}
        total_sum = 0.0
        usable = 0
        for b, batch_idx in enumerate(_batches(order, cfg.batch_size)):
            leaves = ParamLeaves(params)
            F, G, F_aug, G_aug = augmented_views_graph(
                leaves,
                Z[batch_idx],
                cfg.dropout_p,
                derive_seed(cfg.seed, TAG_TRAIN_BATCH, epoch, b),
            )
            bmask = mask_all.take(batch_idx)
            n_sup = int(bmask.supervised.sum())
            n_unl = len(bmask) - n_sup

            parts: dict[str, ad.Var] = {}
            if n_sup > 0 and loss_cfg.weight("scl") != 0.0:
                parts["scl"] = scl_loss(F, F_aug, bmask, cfg.tau, cfg.scl_pool)
            if n_sup > 0 and loss_cfg.weight("ce") != 0.0:
                parts["ce"] = ce_loss(G, bmask)
            if n_unl > 0 and loss_cfg.weight("ilcl") != 0.0:
                parts["ilcl"] = ilcl_loss(F, F_aug, bmask, cfg.tau)
            if columns.size >= 2 and loss_cfg.weight("clcl") != 0.0:
                parts["clcl"] = clcl_loss(G, G_aug, columns, cfg.tau)
            if loss_cfg.weight("pcl") != 0.0:
                batch = BatchTensors(Z=Z[batch_idx], F=F, G=G, F_aug=F_aug, G_aug=G_aug)
                protos, protos_aug = prototype_pair(batch, bmask)
                if protos.n_active >= 2:
                    parts["pcl"] = pcl_loss(protos, protos_aug, cfg.tau)
            if not parts:
                continue

            # (3) one optimizer step per batch
            total = total_loss(parts, loss_cfg)
            grads = ad.gradients(total, leaves.flat())
            state.optimizer.step(params.arrays(), clip_gradients(grads, cfg.grad_clip))

            usable += 1
            total_sum += float(total.value)
            for name, part in parts.items():
                sums[name] += float(part.value)

        if usable == 0:
            raise EmptyBatchError(f"epoch {epoch}: no batch produced a usable loss term")
        state.epoch = epoch + 1
        if on_epoch is not None:
            row = {"epoch": epoch, "loss_total": total_sum / usable}
            row.update({f"loss_{name}": sums[name] / usable for name in LOSS_NAMES})
            row["n_reliable"] = pseudo.n_reliable
            on_epoch(row)

    return state


# --- prediction --------------------------------------------------------------------


def predict(params: ModelParams, Z, setting: str = "open", k_ind: int | None = None) -> np.ndarray:
    """Cluster assignment per row, dropout disabled.

    Open setting: argmax over every cluster column. Ood setting: argmax over
    the new-class columns only (absolute column ids are returned); requires
    ``k_ind``. Ties go to the lowest column index.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.dims.input_dim:
        raise DimsMismatchError(f"inputs {Z.shape} vs model input {params.dims.input_dim}")
    _, G = forward(params, Z)
    if setting == "ood":
        if k_ind is None:
            raise InvalidParamsError("ood-setting prediction requires k_ind")
        columns = np.arange(k_ind, params.dims.n_clusters)
        if columns.size == 0:
            raise NoClassesError("no new-class columns to predict over")
        return columns[np.argmax(G[:, columns], axis=1)]
    if setting != "open":
        raise InvalidParamsError(f"setting must be 'ood' or 'open', got {setting!r}")
    return np.argmax(G, axis=1)


def instance_features(params: ModelParams, Z) -> np.ndarray:
    """Unit-norm instance-head features, dropout disabled."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.dims.input_dim:
        raise DimsMismatchError(f"inputs {Z.shape} vs model input {params.dims.input_dim}")
    F, _ = forward(params, Z)
    return F


# --- dataset-level wrappers -----------------------------------------------------------


def resolve_class_counts(data: EmbeddingDataset, cfg: TrainConfig) -> tuple[int, int]:
    """(k_ind, k_ood) from the dataset's class blocks, validated against any
    explicit config overrides."""
    k_ind = len(data.known_classes)
    k_ood = len(data.unknown_classes)
    if cfg.k_ind is not None and cfg.k_ind != k_ind:
        raise ClassCountMismatchError(f"configured k_ind={cfg.k_ind}, dataset has {k_ind}")
    if cfg.k_ood is not None:
        k_ood = cfg.k_ood
    if k_ind == 0:
        raise NoLabeledDataError("dataset has no labeled training classes")
    if k_ood == 0:
        raise NoClassesError("dataset has no unknown classes and k_ood is not set")
    return k_ind, k_ood


def _train_split_arrays(data: EmbeddingDataset) -> tuple[np.ndarray, np.ndarray]:
    idx = data.indices("train")
    return data.embedding_matrix(idx), data.int_labels(idx)


def pretrain(data: EmbeddingDataset, cfg: TrainConfig) -> ModelParams:
    """Stage 1 over the dataset's labeled training records."""
    if data.dim is None:
        raise NoLabeledDataError("empty dataset")
    k_ind, k_ood = resolve_class_counts(data, cfg)
    Z, y = _train_split_arrays(data)
    keep = y >= 0
    dims = ModelDims(
        input_dim=data.dim,
        hidden_dim=cfg.hidden_dim,
        feature_dim=cfg.feature_dim,
        n_clusters=k_ind + k_ood,
        head_hidden=cfg.head_hidden,
    )
    sub_cfg = replace(cfg, k_ind=k_ind, k_ood=k_ood)
    return pretrain_arrays(Z[keep], y[keep], sub_cfg, dims)


def train(
    data: EmbeddingDataset,
    params: ModelParams,
    cfg: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> ModelParams:
    """Stage 2 over the dataset's full training split (labeled + unlabeled)."""
    if data.dim != params.dims.input_dim:
        raise DimsMismatchError(f"dataset dim {data.dim} vs model input {params.dims.input_dim}")
    k_ind, k_ood = resolve_class_counts(data, cfg)
    Z, y = _train_split_arrays(data)
    sub_cfg = replace(cfg, k_ind=k_ind, k_ood=k_ood)
    state = train_arrays(Z, y, sub_cfg, params=params, on_epoch=on_epoch)
    state.params.lineage.append(
        {
            "stage": "train",
            "seed": int(cfg.seed),
            "epochs": int(cfg.epochs_train),
            "setting": cfg.setting,
            "sigma": float(cfg.sigma),
        }
    )
    return state.params
