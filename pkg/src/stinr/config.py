"""Experiment configuration: flat key=value files, env and CLI overrides.

File format: one `key = value` per line, `#` starts a comment, keys match
the ExperimentConfig field names. Booleans are true/false, the string
`none` means null. Environment variables override file values with the
prefix STINR_ (e.g. STINR_GAE_LR=0.001); explicit --set overrides win over
both. Configs round-trip losslessly through to_file/from_file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "STINR_"

TASKS = ("spatial_imputation", "gene_imputation", "denoise")
VARIANTS = ("suica", "vanilla_inr", "ae_no_graph", "ae_dice_no_graph", "pca_baseline")
BACKBONES = ("auto", "ffn", "siren")


@dataclass
class ExperimentConfig:
    # experiment identity
    task: str = "spatial_imputation"
    variant: str = "suica"
    seed: int = 0
    out_dir: str = "runs/exp"

    # data source: synthetic generator or triplet/CSV files
    source: str = "synthetic"  # synthetic | files
    expr_path: str | None = None
    coords_path: str | None = None
    labels_path: str | None = None
    genes_path: str | None = None
    n_spots: int = 1000
    n_genes: int = 300
    n_types: int = 5
    target_sparsity: float = 0.9
    signature_genes: int = 20

    # preprocessing
    normalize: bool = False
    target_sum: float = 1e4
    high_expr_fraction: float = 0.5

    # model
    knn_k: int = 5
    latent_dim: int = 32
    gae_hidden: int = 512
    backbone: str = "auto"
    omega: float = 30.0
    fourier_size: int = 256
    fourier_sigma: float = 10.0
    inr_hidden: int = 256
    inr_depth: int = 4

    # training (desk-scale defaults; epoch counts follow the two-stage recipe)
    gae_epochs: int = 200
    gae_lr: float = 5e-4
    inr_epochs: int = 1000
    inr_lr: float = 1e-4
    decoder_epochs: int = 1000
    decoder_lr: float = 2e-3
    dice_weight: float = 0.5
    dice_eps: float = 1e-7

    # degradations
    train_fraction: float = 0.8
    mask_fraction: float = 0.7
    noise_sigma: float = 1.0
    clamp_noise: bool = False

    # evaluation
    zero_tau: float | None = None  # none -> 1e-3 * mean_total / n_genes
    aggregation: str = "per_spot_mean"
    emit_heatmaps: bool = True

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.source not in ("synthetic", "files"):
            raise ConfigError(f"source must be synthetic or files, got {self.source!r}")
        if self.source == "files":
            if not self.expr_path or not self.coords_path:
                raise ConfigError("source=files requires expr_path and coords_path")
        elif self.expr_path or self.coords_path:
            raise ConfigError("synthetic source must not also name data files")
        if self.aggregation not in ("per_spot_mean", "global_flat"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        for name in ("train_fraction", "mask_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0,1), got {v}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.zero_tau is not None and self.zero_tau < 0:
            raise ConfigError("zero_tau must be >= 0 or none")
        return self

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_file(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_file(cls, path, env=None, overrides=()) -> "ExperimentConfig":
        values = {}
        path = Path(path)
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return cls._build(values, env, overrides)

    @classmethod
    def from_overrides(cls, env=None, overrides=()) -> "ExperimentConfig":
        return cls._build({}, env, overrides)

    @classmethod
    def _build(cls, values: dict, env, overrides) -> "ExperimentConfig":
        if env is None:
            env = os.environ
        by_name = {f.name: f for f in fields(cls)}
        for key in values:
            if key not in by_name:
                raise ConfigError(f"unknown config key {key!r}")
        for f in by_name.values():
            env_key = ENV_PREFIX + f.name.upper()
            if env_key in env:
                values[f.name] = env[env_key]
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in by_name:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value.strip()
        kwargs = {}
        for key, raw in values.items():
            kwargs[key] = _parse_value(raw, by_name[key], key)
        return cls(**kwargs).validate()


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _parse_value(raw: str, field, key: str):
    if isinstance(raw, (int, float, bool)) or raw is None:
        return raw
    text = raw.strip()
    ann = str(field.type)
    optional = "None" in ann or "| None" in ann
    if optional and text.lower() == "none":
        return None
    try:
        if "bool" in ann:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if "int" in ann:
            return int(text)
        if "float" in ann:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {ann}") from None
