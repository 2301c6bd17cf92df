"""Coordinate network mapping normalized 2D locations to embeddings.

Two backbones: 'ffn' (random Fourier features + ReLU MLP) and 'siren'
(sine-activated MLP with angular velocity omega). Both end in an identity
layer unless an output activation is requested (the direct-regression
baseline ends in ReLU).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError

OMEGA = 30.0
FOURIER_SIZE = 256
HIDDEN_DIM = 256
HIDDEN_LAYERS = 4
SPARSE_SPACING_THRESHOLD = 0.01  # median NN spacing / bbox diagonal


@dataclass
class InrModel:
    backbone: str  # "ffn" | "siren"
    specs: tuple[nn.LayerSpec, ...]
    params: nn.ParamSet
    omega: float
    coord_bounds: np.ndarray  # (2, 2): [[min_x, max_x], [min_y, max_y]]
    out_dim: int


def coord_bounds_of(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    return np.stack([coords.min(axis=0), coords.max(axis=0)], axis=1)


def normalize_coords(coords: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Affine map of each axis onto [-1, 1]; out-of-bounds points pass through."""
    coords = np.asarray(coords, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(hi <= lo):
        raise DataError(f"degenerate coordinate bounds {bounds.tolist()}")
    return 2.0 * (coords - lo) / (hi - lo) - 1.0


def select_backbone(coords: np.ndarray, threshold: float = SPARSE_SPACING_THRESHOLD) -> str:
    """'siren' for spatially sparse slices, 'ffn' for dense ones.

    Sparse means the median nearest-neighbor spacing exceeds `threshold`
    times the bounding-box diagonal.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        return "ffn"
    sq = (coords**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * coords @ coords.T
    np.fill_diagonal(d2, np.inf)
    spacing = float(np.median(np.sqrt(np.maximum(d2.min(axis=1), 0.0))))
    span = coords.max(axis=0) - coords.min(axis=0)
    diameter = float(np.hypot(*span))
    if diameter == 0.0:
        return "ffn"
    return "siren" if spacing / diameter > threshold else "ffn"


def build_inr(
    backbone: str,
    out_dim: int,
    coord_bounds: np.ndarray,
    seed: int = 0,
    hidden: int = HIDDEN_DIM,
    depth: int = HIDDEN_LAYERS,
    omega: float = OMEGA,
    fourier_size: int = FOURIER_SIZE,
    fourier_sigma: float = nn.FOURIER_SIGMA,
    out_activation: str = "identity",
    dtype=np.float32,
) -> InrModel:
    if backbone not in ("ffn", "siren"):
        raise ValueError(f"unknown backbone {backbone!r}")
    if backbone == "ffn":
        dims = [2 * fourier_size] + [hidden] * depth
        specs = tuple(
            nn.LayerSpec("dense", dims[i], dims[i + 1], "relu") for i in range(depth)
        ) + (nn.LayerSpec("dense", hidden, out_dim, out_activation),)
        params = nn.init_params(specs, "ffn", seed, dtype=dtype, fourier_sigma=fourier_sigma)
    else:
        dims = [2] + [hidden] * depth
        specs = tuple(
            nn.LayerSpec("dense", dims[i], dims[i + 1], "sine", omega=omega)
            for i in range(depth)
        ) + (nn.LayerSpec("dense", hidden, out_dim, out_activation, omega=omega),)
        params = nn.init_params(specs, "siren", seed, dtype=dtype)
    return InrModel(backbone, specs, params, omega, np.asarray(coord_bounds, dtype=np.float64), out_dim)


def _features(model: InrModel, coords_norm: np.ndarray) -> np.ndarray:
    X = np.asarray(coords_norm, dtype=model.params.dtype)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DataError(f"coords must be (m, 2), got {X.shape}")
    if model.backbone == "ffn":
        X = nn.fourier_map(X, model.params.fourier_b)
    return X


def inr_forward(model: InrModel, coords_norm: np.ndarray) -> np.ndarray:
    """Evaluate the network at normalized coordinates."""
    X = _features(model, coords_norm)
    return nn.forward(model.params, model.specs, X)[-1]


def embd_loss(z_hat: np.ndarray, z_gt: np.ndarray) -> float:
    """Element-wise mean MSE over the embedding matrix."""
    if z_hat.shape != z_gt.shape:
        raise DataError(f"shape mismatch {z_hat.shape} vs {z_gt.shape}")
    d = np.asarray(z_hat, dtype=np.float64) - np.asarray(z_gt, dtype=np.float64)
    return float(np.mean(d * d))


def train_inr(
    coords: np.ndarray,
    targets: np.ndarray,
    backbone: str = "auto",
    epochs: int = 1000,
    lr: float = 1e-4,
    seed: int = 0,
    hidden: int = HIDDEN_DIM,
    depth: int = HIDDEN_LAYERS,
    omega: float = OMEGA,
    fourier_size: int = FOURIER_SIZE,
    fourier_sigma: float = nn.FOURIER_SIGMA,
    out_activation: str = "identity",
    dtype=np.float32,
) -> tuple[InrModel, list[float]]:
    """Fit coordinates -> targets with full-batch Adam and an MSE objective.

    This stage sees only the target matrix it is given (embedding warm-up
    never touches gene-space losses).
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] != np.asarray(targets).shape[0]:
        raise DataError("coords and targets disagree on the number of spots")
    if backbone == "auto":
        backbone = select_backbone(coords)
    bounds = coord_bounds_of(coords)
    model = build_inr(
        backbone,
        np.asarray(targets).shape[1],
        bounds,
        seed=seed,
        hidden=hidden,
        depth=depth,
        omega=omega,
        fourier_size=fourier_size,
        fourier_sigma=fourier_sigma,
        out_activation=out_activation,
        dtype=dtype,
    )
    if epochs == 0:
        return model, []
    X = _features(model, normalize_coords(coords, bounds))
    tail = nn.MseTail(np.asarray(targets, dtype=dtype))
    params, trace = nn.fit(model.params, model.specs, X, None, tail, epochs, lr)
    model.params = params
    return model, trace
