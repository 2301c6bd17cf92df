"""Graph-augmented autoencoder: graph-conv encoder to a low-dimensional
embedding, dense decoder with a ReLU head back to gene space, pre-trained
by self-regression under a plain element-wise MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import STSlice
from .errors import DataError

LATENT_DIM = 32
HIDDEN_DIM = 512


@dataclass
class GaeModel:
    encoder_specs: tuple[nn.LayerSpec, ...]
    decoder_specs: tuple[nn.LayerSpec, ...]
    params: nn.ParamSet
    latent_dim: int

    @property
    def specs(self) -> tuple[nn.LayerSpec, ...]:
        return self.encoder_specs + self.decoder_specs

    def decoder_params(self) -> nn.ParamSet:
        """Copy of the decoder's parameters (fine-tuning starts here)."""
        ne = len(self.encoder_specs)
        return self.params.slice_layers(ne, ne + len(self.decoder_specs))


def build_gae(
    n_genes: int,
    latent_dim: int = LATENT_DIM,
    hidden: int = HIDDEN_DIM,
    seed: int = 0,
    encoder_kind: str = "gcn",
    dtype=np.float32,
) -> GaeModel:
    """He-initialized autoencoder; encoder_kind='dense' drops the graph."""
    if encoder_kind not in ("gcn", "dense"):
        raise ValueError(f"encoder_kind must be gcn or dense, got {encoder_kind!r}")
    encoder = (
        nn.LayerSpec(encoder_kind, n_genes, hidden, "relu"),
        nn.LayerSpec(encoder_kind, hidden, latent_dim, "identity"),
    )
    decoder = (
        nn.LayerSpec("dense", latent_dim, hidden, "relu"),
        nn.LayerSpec("dense", hidden, n_genes, "relu"),
    )
    params = nn.init_params(encoder + decoder, "he", seed, dtype=dtype)
    return GaeModel(encoder, decoder, params, latent_dim)


def _expr_of(data, dtype):
    X = data.expr if isinstance(data, STSlice) else np.asarray(data)
    return X.astype(dtype, copy=False)


def encode(model: GaeModel, data, graph=None) -> np.ndarray:
    """Per-spot embeddings from the encoder stack."""
    X = _expr_of(data, model.params.dtype)
    if X.shape[1] != model.encoder_specs[0].in_dim:
        raise DataError(
            f"{X.shape[1]} genes but encoder expects {model.encoder_specs[0].in_dim}"
        )
    ne = len(model.encoder_specs)
    params = nn.ParamSet(model.params.weights[:ne], model.params.biases[:ne])
    return nn.forward(params, model.encoder_specs, X, graph)[-1]


def decode(model: GaeModel, Z: np.ndarray) -> np.ndarray:
    """Embeddings back to gene space; nonnegative by the ReLU head."""
    Z = np.asarray(Z, dtype=model.params.dtype)
    if Z.shape[1] != model.latent_dim:
        raise DataError(f"{Z.shape[1]}-dim input for latent_dim {model.latent_dim}")
    ne = len(model.encoder_specs)
    params = nn.ParamSet(model.params.weights[ne:], model.params.biases[ne:])
    return nn.forward(params, model.decoder_specs, Z)[-1]


def gae_loss(y_hat: np.ndarray, y_gt: np.ndarray) -> float:
    """Mean squared difference over all matrix elements."""
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    d = np.asarray(y_hat, dtype=np.float64) - np.asarray(y_gt, dtype=np.float64)
    return float(np.mean(d * d))


def train_gae(
    slice_: STSlice,
    graph,
    epochs: int = 200,
    lr: float = 1e-5,
    seed: int = 0,
    latent_dim: int = LATENT_DIM,
    hidden: int = HIDDEN_DIM,
    encoder_kind: str = "gcn",
    dtype=np.float32,
) -> tuple[GaeModel, list[float]]:
    """Self-regress the slice through the bottleneck with full-batch Adam."""
    model = build_gae(slice_.n_genes, latent_dim, hidden, seed, encoder_kind, dtype)
    if epochs == 0:
        return model, []
    X = _expr_of(slice_, dtype)
    tail = nn.MseTail(X)
    params, trace = nn.fit(model.params, model.specs, X, graph, tail, epochs, lr)
    model.params = params
    return model, trace
