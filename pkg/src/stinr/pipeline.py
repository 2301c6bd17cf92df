"""End-to-end task orchestration: data resolution, the two-stage training
recipe, baselines, the ablation ladder, and run artifacts.

Every run directory holds the resolved config, per-stage loss traces,
checkpoints, predictions, metric reports and timings: enough to reproduce
the run bit-identically from the config alone.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autoencoder, data, graph, head, inr, metrics, nn
from .config import ExperimentConfig
from .errors import DataError
from .metrics import MetricReport

ABLATION_LADDER = ("vanilla_inr", "ae_no_graph", "ae_dice_no_graph", "suica")


def derive_seed(seed: int, label: str) -> int:
    """Stable per-stage seed derivation from the experiment seed."""
    return (seed * 1_000_003 + zlib.crc32(label.encode())) % (2**63)


def resolve_slice(cfg: ExperimentConfig) -> data.STSlice:
    """Generate or load the slice, then run the preprocessing chain."""
    if cfg.source == "synthetic":
        params = data.SyntheticParams(
            n_spots=cfg.n_spots,
            n_genes=cfg.n_genes,
            n_types=cfg.n_types,
            target_sparsity=cfg.target_sparsity,
            signature_genes_per_type=cfg.signature_genes,
            seed=derive_seed(cfg.seed, "data"),
        )
        slice_ = data.generate_synthetic(params)
    else:
        slice_ = data.load_slice(cfg.expr_path, cfg.coords_path, cfg.labels_path, cfg.genes_path)
    slice_ = data.filter_empty(slice_)
    if cfg.normalize:
        slice_ = data.normalize_total(slice_, cfg.target_sum, cfg.high_expr_fraction)
    return slice_


def effective_tau(cfg: ExperimentConfig, slice_: data.STSlice) -> float:
    """Binarization threshold: an entry counts as expressed above tau."""
    if cfg.zero_tau is not None:
        return cfg.zero_tau
    mean_total = float(slice_.expr.sum(axis=1).mean())
    return 1e-3 * mean_total / slice_.n_genes


# ---------------------------------------------------------------------------
# fitted models


@dataclass
class FittedModel:
    variant: str
    predict: Callable[[np.ndarray], np.ndarray]
    traces: dict
    checkpoints: dict
    embedding: np.ndarray | None
    stats: dict
    meta: dict


@dataclass
class PcaCodec:
    """Linear encode/decode baseline standing in for the autoencoder."""

    mean: np.ndarray
    components: np.ndarray  # (d, g)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) @ self.components.T

    def inverse(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components + self.mean


def fit_pca(X: np.ndarray, n_components: int) -> PcaCodec:
    X = np.asarray(X, dtype=np.float64)
    d = min(n_components, X.shape[0], X.shape[1])
    mean = X.mean(axis=0)
    _, S, Vt = np.linalg.svd(X - mean, full_matrices=False)
    if S[0] == 0:
        raise DataError("degenerate covariance: data has rank 0")
    for i in range(Vt.shape[0]):
        j = int(np.argmax(np.abs(Vt[i])))
        if Vt[i, j] < 0:
            Vt[i] = -Vt[i]
    return PcaCodec(mean, Vt[:d])


def _backbone_for(cfg: ExperimentConfig, coords: np.ndarray) -> str:
    return inr.select_backbone(coords) if cfg.backbone == "auto" else cfg.backbone


def _inr_kwargs(cfg: ExperimentConfig) -> dict:
    return dict(
        hidden=cfg.inr_hidden,
        depth=cfg.inr_depth,
        omega=cfg.omega,
        fourier_size=cfg.fourier_size,
        fourier_sigma=cfg.fourier_sigma,
    )


def fit_variant(train_slice: data.STSlice, cfg: ExperimentConfig, timings: dict | None = None) -> FittedModel:
    """Train one pipeline variant on the given slice."""
    timings = {} if timings is None else timings
    backbone = _backbone_for(cfg, train_slice.coords)
    meta = {"variant": cfg.variant, "backbone": backbone}

    def timed(label, fn):
        t0 = time.perf_counter()
        out = fn()
        timings[label] = time.perf_counter() - t0
        return out

    if cfg.variant == "vanilla_inr":
        # direct coordinate -> expression regression, single stage with the
        # combined epoch budget of the two-stage recipe
        model, trace = timed(
            "inr",
            lambda: inr.train_inr(
                train_slice.coords,
                train_slice.expr,
                backbone=backbone,
                epochs=cfg.inr_epochs + cfg.decoder_epochs,
                lr=cfg.inr_lr,
                seed=derive_seed(cfg.seed, "inr"),
                out_activation="relu",
                **_inr_kwargs(cfg),
            ),
        )
        return FittedModel(
            cfg.variant,
            lambda coords: inr.inr_forward(model, inr.normalize_coords(coords, model.coord_bounds)),
            {"inr": trace},
            {"inr": model.params},
            None,
            {},
            meta | {"inr_specs": _specs_json(model.specs), "coord_bounds": model.coord_bounds.tolist()},
        )

    if cfg.variant == "pca_baseline":
        codec = timed("pca", lambda: fit_pca(train_slice.expr, cfg.latent_dim))
        scores = codec.transform(train_slice.expr)
        model, trace = timed(
            "inr",
            lambda: inr.train_inr(
                train_slice.coords,
                scores,
                backbone=backbone,
                epochs=cfg.inr_epochs,
                lr=cfg.inr_lr,
                seed=derive_seed(cfg.seed, "inr"),
                **_inr_kwargs(cfg),
            ),
        )

        def predict(coords):
            z = inr.inr_forward(model, inr.normalize_coords(coords, model.coord_bounds))
            return codec.inverse(np.asarray(z, dtype=np.float64))

        return FittedModel(
            cfg.variant,
            predict,
            {"inr": trace},
            {"inr": model.params},
            scores,
            {"score_mean_abs": float(np.abs(scores).mean())},
            meta | {"inr_specs": _specs_json(model.specs), "coord_bounds": model.coord_bounds.tolist()},
        )

    # autoencoder-based variants
    use_graph = cfg.variant == "suica"
    cell_graph = timed("graph", lambda: graph.build_knn(train_slice.coords, cfg.knn_k))
    gae_model, gae_trace = timed(
        "gae",
        lambda: autoencoder.train_gae(
            train_slice,
            cell_graph if use_graph else None,
            epochs=cfg.gae_epochs,
            lr=cfg.gae_lr,
            seed=derive_seed(cfg.seed, "gae"),
            latent_dim=cfg.latent_dim,
            hidden=cfg.gae_hidden,
            encoder_kind="gcn" if use_graph else "dense",
        ),
    )
    embedding = autoencoder.encode(gae_model, train_slice, cell_graph if use_graph else None)
    gtv_vec, gtv_total = graph.graph_total_variation(cell_graph, embedding)
    chan_var = graph.channelwise_variance(embedding)
    stats = {
        "embedding_abs_mean": float(np.abs(embedding).mean()),
        "embedding_std": float(embedding.std()),
        "gtv_total": gtv_total,
        "channel_variance_mean": float(chan_var.mean()),
        "channel_variance_positive_frac": float((chan_var > 0).mean()),
    }
    inr_model, inr_trace = timed(
        "inr",
        lambda: inr.train_inr(
            train_slice.coords,
            embedding,
            backbone=backbone,
            epochs=cfg.inr_epochs,
            lr=cfg.inr_lr,
            seed=derive_seed(cfg.seed, "inr"),
            **_inr_kwargs(cfg),
        ),
    )
    recons_cfg = head.ReconsLossConfig(
        dice_weight=cfg.dice_weight,
        dice_eps=cfg.dice_eps,
        epochs=cfg.decoder_epochs,
        lr=cfg.decoder_lr,
    )
    # the no-dice rung fine-tunes on the composite loss's MSE term alone
    finetune_loss = "mse_pos" if cfg.variant == "ae_no_graph" else "recons"
    dec_specs, dec_params, dec_trace = timed(
        "decoder",
        lambda: head.finetune_decoder(
            inr_model,
            gae_model,
            train_slice,
            recons_cfg,
            seed=derive_seed(cfg.seed, "decoder"),
            loss=finetune_loss,
        ),
    )
    return FittedModel(
        cfg.variant,
        lambda coords: head.predict(inr_model, dec_specs, dec_params, coords),
        {"gae": gae_trace, "inr": inr_trace, "decoder": dec_trace},
        {"gae": gae_model.params, "inr": inr_model.params, "decoder": dec_params},
        embedding,
        stats,
        meta
        | {
            "inr_specs": _specs_json(inr_model.specs),
            "decoder_specs": _specs_json(dec_specs),
            "coord_bounds": inr_model.coord_bounds.tolist(),
            "gtv_per_vertex_sum": gtv_total,
        },
    )


def _specs_json(specs) -> list[dict]:
    return [
        {"kind": s.kind, "in_dim": s.in_dim, "out_dim": s.out_dim, "activation": s.activation, "omega": s.omega}
        for s in specs
    ]


def specs_from_json(items) -> tuple[nn.LayerSpec, ...]:
    return tuple(
        nn.LayerSpec(d["kind"], d["in_dim"], d["out_dim"], d["activation"], d["omega"]) for d in items
    )


# ---------------------------------------------------------------------------
# task execution


@dataclass
class TaskData:
    """What a task trains on and what it is scored against."""

    fit_slice: data.STSlice
    eval_coords: np.ndarray
    eval_truth: np.ndarray
    eval_labels: tuple | None
    mask: np.ndarray | None  # muted positions (gene imputation only)


def prepare_task(cfg: ExperimentConfig, slice_: data.STSlice) -> TaskData:
    if cfg.task == "spatial_imputation":
        train, test = data.split_spatial(slice_, cfg.train_fraction, derive_seed(cfg.seed, "split"))
        return TaskData(train, test.coords, test.expr, test.labels, None)
    if cfg.task == "gene_imputation":
        degraded, mask = data.mask_genes(slice_, cfg.mask_fraction, derive_seed(cfg.seed, "mask"))
        return TaskData(degraded, slice_.coords, slice_.expr, slice_.labels, mask)
    noisy = data.add_noise(slice_, cfg.noise_sigma, cfg.clamp_noise, derive_seed(cfg.seed, "noise"))
    return TaskData(noisy, slice_.coords, slice_.expr, slice_.labels, None)


def run_task(cfg: ExperimentConfig, write: bool = True) -> MetricReport:
    """Execute one configured task end to end; artifacts land in cfg.out_dir."""
    cfg.validate()
    timings = {}
    t_start = time.perf_counter()
    slice_ = resolve_slice(cfg)
    tau = effective_tau(cfg, slice_)
    task = prepare_task(cfg, slice_)
    model = fit_variant(task.fit_slice, cfg, timings)
    t0 = time.perf_counter()
    y_hat = np.asarray(model.predict(task.eval_coords), dtype=np.float64)
    timings["predict"] = time.perf_counter() - t0
    report = metrics.compute_report(
        y_hat,
        task.eval_truth,
        labels=task.eval_labels,
        tau=tau,
        mode=cfg.aggregation,
        seed=derive_seed(cfg.seed, "ari"),
    )
    timings["total"] = time.perf_counter() - t_start
    if write:
        _write_run_artifacts(cfg, slice_, task, model, y_hat, report, tau, timings)
    return report


def _write_run_artifacts(cfg, slice_, task, model, y_hat, report, tau, timings):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out / "config.txt")
    (out / "report.txt").write_text(report.to_kv_text())
    (out / "report.csv").write_text(
        MetricReport.csv_header() + "\n" + report.to_csv_row() + "\n"
    )
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    for name, trace in model.traces.items():
        lines = ["epoch,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(trace)]
        (traces_dir / f"{name}.csv").write_text("\n".join(lines) + "\n")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for name, params in model.checkpoints.items():
        nn.save_params(params, ckpt_dir / f"{name}.ckpt")
    data.write_triplets(y_hat, out / "predictions.txt", threshold=tau)
    data.write_coords(task.eval_coords, out / "prediction_coords.csv")
    if y_hat.shape[1] <= 64:
        data.write_dense_csv(y_hat, out / "predictions_dense.csv")
    (out / "timing.csv").write_text(
        "stage,seconds\n" + "\n".join(f"{k},{v:.3f}" for k, v in timings.items()) + "\n"
    )
    meta = dict(model.meta)
    meta["tau"] = tau
    meta["stats"] = model.stats
    (out / "model_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if model.embedding is not None:
        chan_var = graph.channelwise_variance(model.embedding)
        lines = ["channel,variance"] + [f"{i},{v:.9g}" for i, v in enumerate(chan_var)]
        (out / "embedding_channel_variance.csv").write_text("\n".join(lines) + "\n")
    if task.mask is not None:
        sub = restricted_report(y_hat, task.eval_truth, task.mask, tau, cfg.aggregation)
        (out / "report_muted.txt").write_text(sub.to_kv_text())
    if cfg.emit_heatmaps:
        hm = out / "heatmaps"
        hm.mkdir(exist_ok=True)
        emit_heatmap(task.eval_coords, task.eval_truth.sum(axis=1), hm / "truth_total.svg")
        emit_heatmap(task.eval_coords, y_hat.sum(axis=1), hm / "prediction_total.svg")


def restricted_report(y_hat, y_gt, mask, tau, mode="per_spot_mean") -> MetricReport:
    """Metrics over the muted positions only (gene-imputation sub-report)."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_gt = np.asarray(y_gt, dtype=np.float64)
    pos = mask & (y_gt > 0)
    if not pos.any():
        raise DataError("no muted positive entries to score")
    d = y_hat[pos] - y_gt[pos]
    mae, mse = float(np.abs(d).mean()), float((d * d).mean())
    cosines, pearsons, spearmans = [], [], []
    for i in range(y_gt.shape[0]):
        sel = mask[i]
        if sel.sum() < 2:
            continue
        a, b = y_hat[i, sel], y_gt[i, sel]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cosines.append(float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0)
        if np.ptp(b) > 0:
            pearsons.append(metrics._pearson(a, b))
            spearmans.append(
                metrics._pearson(metrics._rank_average(a), metrics._rank_average(b))
            )
    pred_zero = (y_hat <= tau) & mask
    true_zero = (y_gt == 0) & mask
    union = int((pred_zero | true_zero).sum())
    iou = float((pred_zero & true_zero).sum()) / union if union else 1.0
    return MetricReport(
        mae_pos=mae,
        mse_pos=mse,
        cosine_mean=float(np.mean(cosines)) if cosines else 0.0,
        pearson_mean=float(np.mean(pearsons)) if pearsons else 0.0,
        spearman_mean=float(np.mean(spearmans)) if spearmans else 0.0,
        zero_iou=iou,
        ari=float("nan"),
        n_eval_spots=int(y_gt.shape[0]),
        n_eval_genes=int(y_gt.shape[1]),
        aggregation_mode=mode,
    )


def run_ablation(cfg: ExperimentConfig) -> list[tuple[str, MetricReport]]:
    """Four-rung ladder with identical seeds; table written to out_dir."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rung in ABLATION_LADDER:
        sub = replace(cfg, variant=rung, out_dir=str(out / rung))
        rows.append((rung, run_task(sub)))
    lines = ["variant," + MetricReport.csv_header()]
    for rung, rep in rows:
        lines.append(f"{rung},{rep.to_csv_row()}")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    _write_spectral_comparison(out, rows)
    return rows


def _write_spectral_comparison(out: Path, rows) -> None:
    """GTV / channel-variance comparison across rungs that expose embeddings."""
    lines = ["variant,gtv_total,channel_variance_mean"]
    for rung, _ in rows:
        meta_path = out / rung / "model_meta.json"
        if not meta_path.exists():
            continue
        meta = json.loads(meta_path.read_text())
        stats = meta.get("stats", {})
        if "gtv_total" in stats:
            lines.append(
                f"{rung},{stats['gtv_total']:.9g},{stats['channel_variance_mean']:.9g}"
            )
    if len(lines) > 1:
        (out / "embedding_spectral.csv").write_text("\n".join(lines) + "\n")


def run_pca_baseline(cfg: ExperimentConfig) -> MetricReport:
    return run_task(replace(cfg, variant="pca_baseline"))


# ---------------------------------------------------------------------------
# plots


def emit_heatmap(coords: np.ndarray, values: np.ndarray, path) -> Path:
    """Spot scatter colored by value, written as deterministic SVG bytes."""
    coords = np.asarray(coords, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataError("heatmap values must be finite")
    if coords.shape[0] != values.shape[0]:
        raise DataError("coords and values disagree on length")
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "stinr", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        vmin, vmax = float(values.min()), float(values.max())
        constant = vmin == vmax
        if constant:
            vmin, vmax = vmin - 0.5, vmax + 0.5
        sc = ax.scatter(
            coords[:, 0], coords[:, 1], c=values, s=10, cmap="viridis", vmin=vmin, vmax=vmax
        )
        cb = fig.colorbar(sc, ax=ax)
        if constant:
            cb.set_ticks([float(values[0])])
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)
