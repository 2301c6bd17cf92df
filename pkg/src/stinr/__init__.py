"""Continuous modeling of sparse spatial-transcriptomics slices.

A graph-augmented autoencoder compresses per-spot expression into a small
embedding; a coordinate network maps 2D locations to those embeddings; a
fine-tuned decoder with a support-matching loss maps them back to gene
space. Together they turn a discrete slice into a function of position
that can be queried anywhere, which is what the spatial-imputation,
gene-imputation and denoising tasks exercise.
"""

from .autoencoder import GaeModel, build_gae, decode, encode, gae_loss, train_gae
from .config import ExperimentConfig
from .data import (
    DegradationSpec,
    STSlice,
    SyntheticParams,
    add_noise,
    filter_empty,
    generate_synthetic,
    load_slice,
    mask_genes,
    normalize_total,
    save_slice,
    split_spatial,
)
from .errors import ConfigError, DataError, NumericalError, StinrError
from .graph import CellGraph, build_knn, channelwise_variance, graph_total_variation, normalized_adjacency
from .head import Masks, ReconsLossConfig, dice_loss, finetune_decoder, predict, recons_loss
from .inr import InrModel, embd_loss, inr_forward, normalize_coords, select_backbone, train_inr
from .metrics import (
    MetricReport,
    adjusted_rand_index,
    cluster_ari,
    compute_report,
    cosine_per_spot,
    masked_fidelity,
    oracle_check,
    pearson_spearman,
    zero_map_iou,
)
from .nn import AdamState, LayerSpec, ParamSet, adam_step, finite_diff_check, forward, fourier_map, gradients, init_params
from .pipeline import emit_heatmap, run_ablation, run_pca_baseline, run_task

__version__ = "0.1.0"
