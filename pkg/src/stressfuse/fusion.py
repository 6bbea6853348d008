"""Builders and prediction logic for the model families.

Three families tie the engine to the feature matrices: multivariate
(one modality, one network), early fusion (one network over the
concatenated selected features), and late fusion (either averaging the two
unimodal probability outputs, or concatenating the two penultimate
representations under a joint trained head).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnengine as nn
from .errors import ShapeError, SpecError

MODEL_KINDS = ("cnn1d", "cnn2d", "fcdnn")
FAMILIES = ("multivariate", "early", "late_decision", "late_concat")
MODALITIES = ("BIO", "LND")

# row-major reshape grids for feeding a selected feature vector to a 2-D net
DEFAULT_GRIDS = {30: (5, 6), 100: (10, 10)}


@dataclass(frozen=True)
class FusionSpec:
    """Which family/kind to run and how to reshape 2-D inputs."""

    family: str
    kind: str = "cnn1d"          # multivariate / early
    modality: str = "BIO"        # multivariate only
    bio_kind: str = "cnn1d"      # late fusion trunk kinds
    lnd_kind: str = "cnn2d"
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"family must be one of {FAMILIES}, got {self.family!r}")
        for kind in (self.kind, self.bio_kind, self.lnd_kind):
            if kind not in MODEL_KINDS:
                raise SpecError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
        if self.modality not in MODALITIES:
            raise SpecError(f"modality must be one of {MODALITIES}")


def grid_for(k: int, grid: tuple[int, int] | None = None) -> tuple[int, int]:
    """Reshape grid for a k-feature vector: configured, published default,
    or the most square factor pair; primes have no usable grid."""
    if grid is not None:
        if grid[0] * grid[1] != k:
            raise SpecError(f"grid {grid} does not factor k={k}")
        return grid
    if k in DEFAULT_GRIDS:
        return DEFAULT_GRIDS[k]
    root = int(np.sqrt(k))
    for r in range(root, 1, -1):
        if k % r == 0:
            return (r, k // r)
    raise SpecError(f"k={k} has no 2-D grid; configure one explicitly")


def _trunk_layers(kind: str) -> tuple[nn.LayerSpec, ...]:
    """Default architecture up to (and including) the penultimate ReLU."""
    if kind == "cnn1d":
        return (nn.conv1d(32, 3), nn.relu(), nn.maxpool1d(2), nn.flatten(),
                nn.dense(64), nn.relu())
    if kind == "cnn2d":
        return (nn.conv2d(16, 3, 3), nn.relu(), nn.maxpool2d(2), nn.flatten(),
                nn.dense(64), nn.relu())
    if kind == "fcdnn":
        return (nn.dense(128), nn.relu(), nn.dense(64), nn.relu())
    raise SpecError(f"unknown model kind {kind!r}")


def input_shape_for(kind: str, k: int,
                    grid: tuple[int, int] | None = None) -> tuple[int, ...]:
    if kind == "cnn1d":
        return (k, 1)
    if kind == "cnn2d":
        r, c = grid_for(k, grid)
        return (r, c, 1)
    return (k,)


def to_model_input(X: np.ndarray, kind: str,
                   grid: tuple[int, int] | None = None) -> np.ndarray:
    """Reshape (rows, k) feature values for the given network kind.

    Rows stay row-major over selection rank order.
    """
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    return X.reshape((n,) + input_shape_for(kind, k, grid))


def make_trunk(kind: str, k: int, grid: tuple[int, int] | None = None) -> nn.BranchSpec:
    """Headless branch (ends before the softmax head) for late-concat fusion."""
    return nn.BranchSpec(input_shape_for(kind, k, grid), _trunk_layers(kind))


def build_multivariate(kind: str, modality: str, k_features: int, seed: int = 0,
                       grid: tuple[int, int] | None = None) -> nn.ModelSpec:
    """Single-modality model over k selected features."""
    if modality not in MODALITIES:
        raise SpecError(f"modality must be one of {MODALITIES}, got {modality!r}")
    layers = _trunk_layers(kind) + (nn.softmax_head(),)
    return nn.ModelSpec.sequential(input_shape_for(kind, k_features, grid),
                                   layers, seed=seed)


def build_early(kind: str, k_fused: int, seed: int = 0,
                grid: tuple[int, int] | None = None) -> nn.ModelSpec:
    """One network over the concatenated (already selected) fused features."""
    layers = _trunk_layers(kind) + (nn.softmax_head(),)
    return nn.ModelSpec.sequential(input_shape_for(kind, k_fused, grid),
                                   layers, seed=seed)


def build_late_concat(trunk_bio: nn.BranchSpec, trunk_lnd: nn.BranchSpec,
                      seed: int = 0) -> nn.ModelSpec:
    """Joint model: both penultimate representations concatenated under one
    dense head, trained end to end."""
    for trunk in (trunk_bio, trunk_lnd):
        if not trunk.layers:
            raise ShapeError("trunk has no layers; output shape unknown")
        if trunk.layers[-1].kind == "softmax_head":
            raise ShapeError("trunks must end before their softmax heads")
    spec = nn.ModelSpec(branches=(trunk_bio, trunk_lnd),
                        head=(nn.dense(64), nn.relu(), nn.softmax_head()),
                        seed=seed)
    spec.validate()
    return spec


def predict_late_decision(model_bio, model_lnd, x_bio, x_lnd):
    """Average the two unimodal probability rows; argmax with lowest-index
    tie-break. Returns (probabilities, labels)."""
    p_bio = np.asarray(model_bio.forward(x_bio), dtype=float)
    p_lnd = np.asarray(model_lnd.forward(x_lnd), dtype=float)
    if p_bio.shape != p_lnd.shape:
        raise ShapeError(f"probability shapes differ: {p_bio.shape} vs {p_lnd.shape}")
    for name, p in (("bio", p_bio), ("lnd", p_lnd)):
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
            raise ShapeError(f"{name} probability rows are not normalized")
    probs = 0.5 * (p_bio + p_lnd)
    return probs, np.argmax(probs, axis=1)
