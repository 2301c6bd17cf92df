"""Decoder fine-tuning on top of a frozen coordinate network.

The composite reconstruction objective is

    L = mean over positive positions of (y_hat - y)^2
      + mean over all positions of |y_hat - y|
      + lambda * dice(y_hat, y)

where dice matches the predicted support (tanh pseudo-probabilities)
against the zero/nonzero pattern of the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import inr, nn
from .data import STSlice
from .errors import DataError


@dataclass(frozen=True)
class ReconsLossConfig:
    dice_weight: float = 0.5  # lambda
    dice_eps: float = 1e-7  # epsilon
    epochs: int = 1000
    lr: float = 1e-4

    def __post_init__(self):
        if self.dice_weight < 0:
            raise ValueError("dice_weight must be >= 0")
        if self.dice_eps <= 0:
            raise ValueError("dice_eps must be > 0")


@dataclass(frozen=True)
class Masks:
    """All-elements mask |M| and the positive-support mask M+."""

    positive: np.ndarray  # bool (n, g), true where y_gt > 0

    @classmethod
    def from_truth(cls, y_gt: np.ndarray) -> "Masks":
        return cls(np.asarray(y_gt) > 0)

    @property
    def n_total(self) -> int:
        return self.positive.size

    @property
    def n_positive(self) -> int:
        return int(self.positive.sum())


def dice_loss(y_hat: np.ndarray, y_gt: np.ndarray, eps: float = 1e-7) -> float:
    """Support-overlap loss in [0, 1); y_hat must be nonnegative."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    if y_hat.size and y_hat.min() < 0:
        raise DataError("dice_loss requires nonnegative predictions (ReLU head)")
    t = np.tanh(y_hat)
    s = (y_gt > 0).astype(np.float64)
    num = 2.0 * float((t * s).sum()) + eps
    den = float(t.sum()) + float(s.sum()) + eps
    return 1.0 - num / den


def recons_loss(
    y_hat: np.ndarray, y_gt: np.ndarray, masks: Masks, cfg: ReconsLossConfig
) -> tuple[float, dict]:
    """Composite loss and its parts {mse_pos, mae_all, dice}."""
    if y_hat.shape != y_gt.shape:
        raise DataError(f"shape mismatch {y_hat.shape} vs {y_gt.shape}")
    if masks.n_positive == 0:
        raise DataError("ground truth has no positive entries (degenerate slice)")
    diff = np.asarray(y_hat, dtype=np.float64) - np.asarray(y_gt, dtype=np.float64)
    mse_pos = float((diff[masks.positive] ** 2).mean())
    mae_all = float(np.abs(diff).mean())
    dice = dice_loss(y_hat, y_gt, cfg.dice_eps)
    parts = {"mse_pos": mse_pos, "mae_all": mae_all, "dice": dice}
    return mse_pos + mae_all + cfg.dice_weight * dice, parts


class MsePosTail:
    """Masked MSE over positive positions only (the composite loss's MSE
    term in isolation; zeros receive no penalty at all)."""

    def __init__(self, y_gt: np.ndarray, masks: Masks):
        if masks.n_positive == 0:
            raise DataError("ground truth has no positive entries (degenerate slice)")
        self.y_gt = y_gt
        self.masks = masks

    def value(self, Y: np.ndarray) -> float:
        diff = Y.astype(np.float64) - self.y_gt
        return float((diff[self.masks.positive] ** 2).mean())

    def grad(self, Y: np.ndarray) -> np.ndarray:
        pos = self.masks.positive
        g = np.zeros(Y.shape, dtype=np.float64)
        diff = Y.astype(np.float64) - self.y_gt
        g[pos] = (2.0 / self.masks.n_positive) * diff[pos]
        return g.astype(Y.dtype)


class ReconsTail:
    """Loss tail driving decoder fine-tuning with the composite objective."""

    def __init__(self, y_gt: np.ndarray, masks: Masks, cfg: ReconsLossConfig):
        if masks.n_positive == 0:
            raise DataError("ground truth has no positive entries (degenerate slice)")
        self.y_gt = y_gt
        self.masks = masks
        self.cfg = cfg

    def value(self, Y: np.ndarray) -> float:
        return recons_loss(Y, self.y_gt, self.masks, self.cfg)[0]

    def grad(self, Y: np.ndarray) -> np.ndarray:
        pos = self.masks.positive
        diff = Y.astype(np.float64) - self.y_gt
        g = np.sign(diff) / self.masks.n_total
        g[pos] += (2.0 / self.masks.n_positive) * diff[pos]
        lam = self.cfg.dice_weight
        if lam > 0:
            t = np.tanh(np.asarray(Y, dtype=np.float64))
            s = pos.astype(np.float64)
            eps = self.cfg.dice_eps
            num = 2.0 * float((t * s).sum()) + eps
            den = float(t.sum()) + float(s.sum()) + eps
            # d dice / d t = (num - 2 s den) / den^2 ; d t / d y = 1 - t^2
            g += lam * ((num - 2.0 * s * den) / den**2) * (1.0 - t * t)
        return g.astype(Y.dtype)


def finetune_decoder(
    inr_model: inr.InrModel,
    gae_model,
    slice_: STSlice,
    cfg: ReconsLossConfig,
    seed: int = 0,
    loss: str = "recons",
) -> tuple[tuple[nn.LayerSpec, ...], nn.ParamSet, list[float]]:
    """Train the pre-trained decoder to map frozen INR outputs to readouts.

    The INR is evaluated once up front, so no gradient can reach it; only
    decoder parameters move. loss='mse_pos' trains on the composite loss's
    masked MSE term alone (the no-dice ablation rung); loss='mse' is a
    plain element-wise MSE.
    """
    coords_norm = inr.normalize_coords(slice_.coords, inr_model.coord_bounds)
    z_hat = inr.inr_forward(inr_model, coords_norm)
    specs = gae_model.decoder_specs
    params = gae_model.decoder_params()
    if loss == "recons":
        tail = ReconsTail(slice_.expr, Masks.from_truth(slice_.expr), cfg)
    elif loss == "mse_pos":
        tail = MsePosTail(slice_.expr, Masks.from_truth(slice_.expr))
    elif loss == "mse":
        tail = nn.MseTail(slice_.expr.astype(params.dtype))
    else:
        raise ValueError(f"unknown fine-tune loss {loss!r}")
    params, trace = nn.fit(params, specs, z_hat, None, tail, cfg.epochs, cfg.lr)
    return specs, params, trace


def predict(
    inr_model: inr.InrModel,
    decoder_specs,
    decoder_params: nn.ParamSet,
    coords: np.ndarray,
) -> np.ndarray:
    """Gene expressions at arbitrary coordinates (slice units)."""
    coords_norm = inr.normalize_coords(coords, inr_model.coord_bounds)
    z_hat = inr.inr_forward(inr_model, coords_norm)
    return nn.forward(decoder_params, decoder_specs, z_hat)[-1]
