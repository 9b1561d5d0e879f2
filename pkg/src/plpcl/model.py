"""The trainable network.

A small MLP trunk over precomputed utterance embeddings feeds two independent
heads: an instance head producing L2-normalized feature rows F, and a cluster
head producing softmax probability rows G over all (in-domain + new) cluster
columns. Augmented views come from dropout on the trunk's hidden activations,
each view with its own deterministic mask.

The forward pass is built on the autodiff graph; the ndarray-facing functions
simply unwrap the results, so training and inference share one code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import (
    DimsMismatchError,
    InvalidDimsError,
    InvalidDropoutError,
)
from .seeding import TAG_DROPOUT, TAG_INIT, TAG_VIEW, derive_seed, rng_for

CHECKPOINT_FORMAT = "plpcl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    """Layer widths: input d -> hidden -> {feature_dim, n_clusters}.

    ``head_hidden`` optionally inserts ReLU hidden layers of the given widths
    into both heads; the default is a single linear layer per head.
    """

    input_dim: int
    hidden_dim: int = 128
    feature_dim: int = 128
    n_clusters: int = 2
    head_hidden: tuple[int, ...] = ()

    def validate(self) -> "ModelDims":
        sizes = (self.input_dim, self.hidden_dim, self.feature_dim, self.n_clusters, *self.head_hidden)
        if any(int(s) < 1 for s in sizes):
            raise InvalidDimsError(f"all dims must be >= 1, got {self}")
        return self


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


@dataclass
class ModelParams:
    dims: ModelDims
    backbone: list[Layer]
    head_f: list[Layer]
    head_g: list[Layer]
    lineage: list[dict] = field(default_factory=list)

    def layers(self) -> list[Layer]:
        return [*self.backbone, *self.head_f, *self.head_g]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order (optimizer state aligns to it)."""
        out = []
        for layer in self.layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims,
            backbone=[Layer(l.w.copy(), l.b.copy()) for l in self.backbone],
            head_f=[Layer(l.w.copy(), l.b.copy()) for l in self.head_f],
            head_g=[Layer(l.w.copy(), l.b.copy()) for l in self.head_g],
            lineage=[dict(e) for e in self.lineage],
        )


@dataclass
class BatchTensors:
    """Per-batch activations: inputs Z, features F, probabilities G, and the
    dropout-augmented view of each."""

    Z: np.ndarray
    F: np.ndarray
    G: np.ndarray
    F_aug: np.ndarray
    G_aug: np.ndarray


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return Layer(w=w, b=np.zeros(fan_out))


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    Layers are drawn from one seeded stream in a fixed order, so identical
    (dims, seed) yield bit-identical parameters.
    """
    dims = dims.validate()
    rng = rng_for(seed, TAG_INIT)
    backbone = [_uniform_layer(rng, dims.input_dim, dims.hidden_dim)]

    def head(out_dim: int) -> list[Layer]:
        widths = [dims.hidden_dim, *dims.head_hidden, out_dim]
        return [_uniform_layer(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]

    params = ModelParams(
        dims=dims,
        backbone=backbone,
        head_f=head(dims.feature_dim),
        head_g=head(dims.n_clusters),
    )
    params.lineage.append({"stage": "init", "seed": int(seed)})
    return params


# --- forward ------------------------------------------------------------------


class ParamLeaves:
    """Tape leaves mirroring a ModelParams; reused across the losses of one step."""

    def __init__(self, params: ModelParams):
        self.dims = params.dims
        self.backbone = [(ad.Var(l.w), ad.Var(l.b)) for l in params.backbone]
        self.head_f = [(ad.Var(l.w), ad.Var(l.b)) for l in params.head_f]
        self.head_g = [(ad.Var(l.w), ad.Var(l.b)) for l in params.head_g]

    def flat(self) -> list[ad.Var]:
        out = []
        for group in (self.backbone, self.head_f, self.head_g):
            for w, b in group:
                out.append(w)
                out.append(b)
        return out


def _check_forward_args(dims: ModelDims, Z: np.ndarray, dropout_p: float) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != dims.input_dim:
        raise DimsMismatchError(f"expected inputs of width {dims.input_dim}, got {Z.shape}")
    if not (0.0 <= dropout_p < 1.0):
        raise InvalidDropoutError(f"dropout_p must be in [0, 1), got {dropout_p}")
    return Z


def forward_graph(leaves: ParamLeaves, Z: np.ndarray, dropout_p: float, seed: int) -> tuple[ad.Var, ad.Var]:
    """Differentiable forward pass: returns (F, G) as graph nodes.

    Inverted dropout on the trunk's hidden activations: the mask is drawn from
    ``seed`` and survivors are scaled by 1/(1-p).
    """
    Z = _check_forward_args(leaves.dims, Z, dropout_p)
    h = ad.Var(Z)
    for w, b in leaves.backbone:
        h = ad.relu(ad.add(ad.matmul(h, w), b))
    if dropout_p > 0.0:
        rng = rng_for(seed, TAG_DROPOUT)
        mask = (rng.random(h.value.shape) >= dropout_p) / (1.0 - dropout_p)
        h = ad.mul(h, mask)

    def run_head(layers) -> ad.Var:
        a = h
        for i, (w, b) in enumerate(layers):
            a = ad.add(ad.matmul(a, w), b)
            if i < len(layers) - 1:
                a = ad.relu(a)
        return a

    F = ad.l2_normalize_rows(run_head(leaves.head_f))
    G = ad.softmax_rows(run_head(leaves.head_g))
    return F, G


def forward(params: ModelParams, Z, dropout_p: float = 0.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(F, G) as plain arrays; rows of F unit-norm, rows of G sum to 1."""
    F, G = forward_graph(ParamLeaves(params), Z, dropout_p, seed)
    return F.value, G.value


def view_seeds(seed: int) -> tuple[int, int]:
    """Two independent per-view dropout seeds derived from one batch seed."""
    return derive_seed(seed, TAG_VIEW, 0), derive_seed(seed, TAG_VIEW, 1)


def augmented_views_graph(
    leaves: ParamLeaves, Z: np.ndarray, dropout_p: float, seed: int
) -> tuple[ad.Var, ad.Var, ad.Var, ad.Var]:
    s1, s2 = view_seeds(seed)
    F, G = forward_graph(leaves, Z, dropout_p, s1)
    F_aug, G_aug = forward_graph(leaves, Z, dropout_p, s2)
    return F, G, F_aug, G_aug


def augmented_views(params: ModelParams, Z, dropout_p: float, seed: int) -> BatchTensors:
    """Two stochastic views of one batch under shared parameters.

    With dropout_p == 0 the views coincide exactly.
    """
    Z = np.asarray(Z, dtype=np.float64)
    F, G, F_aug, G_aug = augmented_views_graph(ParamLeaves(params), Z, dropout_p, seed)
    return BatchTensors(Z=Z, F=F.value, G=G.value, F_aug=F_aug.value, G_aug=G_aug.value)


# --- checkpoint io ----------------------------------------------------------------


def _layer_to_json(layer: Layer) -> dict:
    return {"w": layer.w.tolist(), "b": layer.b.tolist()}


def _layer_from_json(obj: dict) -> Layer:
    return Layer(w=np.asarray(obj["w"], dtype=np.float64), b=np.asarray(obj["b"], dtype=np.float64))


def params_to_json(params: ModelParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {
            "input_dim": params.dims.input_dim,
            "hidden_dim": params.dims.hidden_dim,
            "feature_dim": params.dims.feature_dim,
            "n_clusters": params.dims.n_clusters,
            "head_hidden": list(params.dims.head_hidden),
        },
        "lineage": params.lineage,
        "backbone": [_layer_to_json(l) for l in params.backbone],
        "head_f": [_layer_to_json(l) for l in params.head_f],
        "head_g": [_layer_to_json(l) for l in params.head_g],
    }


def params_from_json(obj: dict) -> ModelParams:
    dims = ModelDims(
        input_dim=int(obj["dims"]["input_dim"]),
        hidden_dim=int(obj["dims"]["hidden_dim"]),
        feature_dim=int(obj["dims"]["feature_dim"]),
        n_clusters=int(obj["dims"]["n_clusters"]),
        head_hidden=tuple(int(x) for x in obj["dims"].get("head_hidden", ())),
    )
    return ModelParams(
        dims=dims,
        backbone=[_layer_from_json(l) for l in obj["backbone"]],
        head_f=[_layer_from_json(l) for l in obj["head_f"]],
        head_g=[_layer_from_json(l) for l in obj["head_g"]],
        lineage=[dict(e) for e in obj.get("lineage", [])],
    )


def save_checkpoint(params: ModelParams, path) -> None:
    """Write weights as JSON; float serialization round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_json(params), fh)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_json(json.load(fh))
