"""Scikit-learn style estimator wrapping the two-stage pipeline.

``PLPCL`` follows the semi-supervised labeling convention of
``sklearn.semi_supervised``: ``fit(X, y)`` takes embeddings plus integer
labels where ``-1`` marks unlabeled rows. Known classes come from the labeled
rows; ``n_new_clusters`` reserves extra cluster columns for categories that
only exist in the unlabeled pool.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import NoLabeledDataError
from .model import ModelDims
from .pipeline import (
    TrainConfig,
    instance_features,
    predict as pipeline_predict,
    pretrain_arrays,
    train_arrays,
)


class PLPCL(ClusterMixin, BaseEstimator):
    """Pseudo-label enhanced prototypical contrastive clustering.

    Pretrains a two-head MLP on the labeled rows (supervised contrastive +
    cross-entropy), then iterates pseudo-label selection, semi-supervised
    contrastive learning, and prototype contrast over the whole data.

    Parameters
    ----------
    n_new_clusters : int
        Cluster columns reserved for categories absent from the labels.
    setting : {"open", "ood"}
        "open" predicts over every cluster column; "ood" predicts only over
        the new-class columns.
    sigma : float
        Pseudo-label confidence threshold; 1 disables pseudo-labels, 0
        accepts all of them.
    tau : float
        Contrastive temperature shared by every contrastive term.
    loss_weights : dict or None
        Per-term weights over {"scl", "ilcl", "ce", "clcl", "pcl"}; missing
        terms default to 1.
    random_state : int
        Seed for init, dropout masks, and batch shuffles; runs repeat
        bit-for-bit.

    Attributes
    ----------
    params_ : ModelParams
        Trained weights.
    classes_ : ndarray
        Distinct labels seen in ``y``, in sorted order; cluster columns
        0..len(classes_)-1 correspond to them.
    labels_ : ndarray
        Cluster assignment of the training rows.
    """

    def __init__(
        self,
        n_new_clusters: int = 2,
        *,
        setting: str = "open",
        sigma: float = 0.99,
        tau: float = 0.5,
        hidden_dim: int = 128,
        feature_dim: int = 128,
        head_hidden: tuple[int, ...] = (),
        dropout: float = 0.1,
        batch_size: int = 128,
        pretrain_epochs: int = 100,
        epochs: int = 100,
        pretrain_lr: float = 5e-5,
        lr: float = 3e-4,
        loss_weights: dict[str, float] | None = None,
        scl_pool: str = "augmented",
        grad_clip: float = 5.0,
        random_state: int = 1,
    ):
        self.n_new_clusters = n_new_clusters
        self.setting = setting
        self.sigma = sigma
        self.tau = tau
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.batch_size = batch_size
        self.pretrain_epochs = pretrain_epochs
        self.epochs = epochs
        self.pretrain_lr = pretrain_lr
        self.lr = lr
        self.loss_weights = loss_weights
        self.scl_pool = scl_pool
        self.grad_clip = grad_clip
        self.random_state = random_state

    def _config(self, k_ind: int) -> TrainConfig:
        weights = {name: 1.0 for name in ("scl", "ilcl", "ce", "clcl", "pcl")}
        if self.loss_weights:
            weights.update({k: float(v) for k, v in self.loss_weights.items()})
        return TrainConfig(
            setting=self.setting,
            sigma=self.sigma,
            tau=self.tau,
            weights=weights,
            pretrain_lr=self.pretrain_lr,
            train_lr=self.lr,
            epochs_pretrain=self.pretrain_epochs,
            epochs_train=self.epochs,
            batch_size=self.batch_size,
            dropout_p=self.dropout,
            seed=self.random_state,
            k_ind=k_ind,
            k_ood=self.n_new_clusters,
            hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            head_hidden=tuple(self.head_hidden),
            grad_clip=self.grad_clip,
            scl_pool=self.scl_pool,
        )

    def fit(self, X, y):
        """Run both training stages.

        ``y`` holds non-negative class labels for labeled rows and -1 for
        unlabeled rows.
        """
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must be 1-D of length {X.shape[0]}, got {y.shape}")
        classes = np.unique(y[y >= 0])
        if classes.size == 0:
            raise NoLabeledDataError("fit requires at least one labeled row (y >= 0)")
        encoded = np.where(y >= 0, np.searchsorted(classes, np.maximum(y, 0)), -1)

        cfg = self._config(k_ind=classes.size)
        dims = ModelDims(
            input_dim=X.shape[1],
            hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            n_clusters=classes.size + self.n_new_clusters,
            head_hidden=tuple(self.head_hidden),
        )
        labeled = encoded >= 0
        params = pretrain_arrays(X[labeled], encoded[labeled], cfg, dims)
        state = train_arrays(X, encoded, cfg, params=params)

        self.classes_ = classes
        self.k_ind_ = int(classes.size)
        self.params_ = state.params
        self.n_features_in_ = int(X.shape[1])
        self.reliable_history_ = [p.n_reliable for p in state.pseudo_history]
        self.labels_ = self.predict(X)
        return self

    def predict(self, X) -> np.ndarray:
        """Cluster column per row (absolute column ids in the ood setting)."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return pipeline_predict(self.params_, X, self.setting, self.k_ind_)

    def transform(self, X) -> np.ndarray:
        """Unit-norm instance-head features."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return instance_features(self.params_, X)

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)
