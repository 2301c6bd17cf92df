"""Command-line entry points.

    stinr generate   --config c.txt            synthesize a slice to disk
    stinr preprocess --config c.txt            filter/normalize data files
    stinr degrade    --config c.txt --kind …   write a degraded copy
    stinr train      --config c.txt            fit the configured variant
    stinr infer      --config c.txt --coords f predict at new coordinates
    stinr evaluate   --config c.txt --pred f   score predictions vs truth
    stinr run        --config c.txt            full task end to end
    stinr ablate     --config c.txt            four-rung ablation ladder

All subcommands accept --set key=value (repeatable) plus the targeted
shortcuts --seed/--task/--variant/--out. Exit codes: 0 ok, 1 config error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, head, inr, metrics, nn, pipeline
from .config import ExperimentConfig
from .errors import StinrError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--task")
    p.add_argument("--variant")
    p.add_argument("--out")


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.task:
        overrides.append(f"task={args.task}")
    if args.variant:
        overrides.append(f"variant={args.variant}")
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides=overrides)
    return ExperimentConfig.from_overrides(overrides=overrides)


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    slice_ = pipeline.resolve_slice(cfg)
    out = _out_dir(cfg) / "data"
    out.mkdir(exist_ok=True)
    data.save_slice(
        slice_, out / "expr.txt", out / "coords.csv", out / "labels.txt", out / "genes.txt"
    )
    print(
        f"wrote {slice_.n_spots} spots x {slice_.n_genes} genes "
        f"({slice_.zero_fraction():.1%} zeros) to {out}"
    )
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    slice_ = pipeline.resolve_slice(cfg)  # filter_empty (+ normalize) applied
    out = _out_dir(cfg) / "preprocessed"
    out.mkdir(exist_ok=True)
    labels = out / "labels.txt" if slice_.labels is not None else None
    data.save_slice(slice_, out / "expr.txt", out / "coords.csv", labels, out / "genes.txt")
    print(f"preprocessed slice: {slice_.n_spots} spots x {slice_.n_genes} genes -> {out}")
    return 0


def cmd_degrade(args) -> int:
    cfg = _load_config(args)
    kind = args.kind or {
        "spatial_imputation": "spatial_split",
        "gene_imputation": "gene_mask",
        "denoise": "gaussian_noise",
    }[cfg.task]
    spec = data.DegradationSpec(
        kind=kind,
        fraction=cfg.train_fraction if kind == "spatial_split" else cfg.mask_fraction,
        sigma=cfg.noise_sigma,
        clamp_nonnegative=cfg.clamp_noise,
        seed=pipeline.derive_seed(cfg.seed, kind),
    )
    slice_ = pipeline.resolve_slice(cfg)
    out = _out_dir(cfg) / "degraded"
    out.mkdir(exist_ok=True)
    if kind == "spatial_split":
        train, test = data.apply_degradation(slice_, spec)
        for name, part in (("train", train), ("test", test)):
            labels = out / f"{name}_labels.txt" if part.labels is not None else None
            data.save_slice(part, out / f"{name}_expr.txt", out / f"{name}_coords.csv", labels)
        print(f"split {slice_.n_spots} spots into {train.n_spots}/{test.n_spots} -> {out}")
    elif kind == "gene_mask":
        degraded, mask = data.apply_degradation(slice_, spec)
        data.write_triplets(degraded.expr, out / "expr.txt")
        data.write_coords(degraded.coords, out / "coords.csv")
        data.write_triplets(mask.astype(np.float64), out / "mask.txt")
        print(f"muted {int(mask.sum())} of {mask.size} entries -> {out}")
    else:
        noisy = data.apply_degradation(slice_, spec)
        # noisy data may be negative, which the triplet format refuses
        data.write_dense_csv(noisy.expr, out / "expr_noisy.csv")
        data.write_coords(noisy.coords, out / "coords.csv")
        print(f"injected N(0, {cfg.noise_sigma}^2) noise -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    slice_ = pipeline.resolve_slice(cfg)
    task = pipeline.prepare_task(cfg, slice_)
    timings = {}
    model = pipeline.fit_variant(task.fit_slice, cfg, timings)
    out = _out_dir(cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for name, params in model.checkpoints.items():
        nn.save_params(params, ckpt_dir / f"{name}.ckpt")
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    for name, trace in model.traces.items():
        lines = ["epoch,loss"] + [f"{i},{v:.9g}" for i, v in enumerate(trace)]
        (traces_dir / f"{name}.csv").write_text("\n".join(lines) + "\n")
    meta = dict(model.meta)
    meta["stats"] = model.stats
    meta["tau"] = pipeline.effective_tau(cfg, slice_)
    (out / "model_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    cfg.to_file(out / "config.txt")
    for name, trace in model.traces.items():
        if trace:
            print(f"{name}: loss {trace[0]:.6g} -> {trace[-1]:.6g} ({len(trace)} epochs)")
    print(f"checkpoints in {ckpt_dir}")
    return 0


def _rebuild(cfg) -> tuple[inr.InrModel, tuple, nn.ParamSet | None]:
    out = Path(cfg.out_dir)
    meta = json.loads((out / "model_meta.json").read_text())
    if meta["variant"] in ("vanilla_inr", "pca_baseline"):
        raise StinrError(f"infer supports autoencoder variants, run dir holds {meta['variant']}")
    inr_specs = pipeline.specs_from_json(meta["inr_specs"])
    inr_params = nn.load_params(out / "checkpoints" / "inr.ckpt", inr_specs)
    model = inr.InrModel(
        backbone=meta["backbone"],
        specs=inr_specs,
        params=inr_params,
        omega=cfg.omega,
        coord_bounds=np.asarray(meta["coord_bounds"]),
        out_dim=inr_specs[-1].out_dim,
    )
    dec_specs = pipeline.specs_from_json(meta["decoder_specs"])
    dec_params = nn.load_params(out / "checkpoints" / "decoder.ckpt", dec_specs)
    return model, dec_specs, dec_params


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    coords = data.read_coords(args.coords)
    model, dec_specs, dec_params = _rebuild(cfg)
    out = _out_dir(cfg)
    z = inr.inr_forward(model, inr.normalize_coords(coords, model.coord_bounds))
    with open(out / "embeddings.csv", "w") as fh:
        fh.write(",".join(f"z{i}" for i in range(z.shape[1])) + "\n")
        for row in z:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
    y_hat = head.predict(model, dec_specs, dec_params, coords)
    meta = json.loads((Path(cfg.out_dir) / "model_meta.json").read_text())
    data.write_triplets(y_hat, out / "predictions.txt", threshold=meta.get("tau", 0.0))
    print(f"wrote embeddings.csv and predictions.txt for {coords.shape[0]} coordinates")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    slice_ = pipeline.resolve_slice(cfg)
    y_hat = data.read_triplets(args.pred)
    if y_hat.shape != slice_.expr.shape:
        raise StinrError(
            f"prediction shape {y_hat.shape} does not match truth {slice_.expr.shape}"
        )
    report = metrics.compute_report(
        y_hat,
        slice_.expr,
        labels=slice_.labels,
        tau=pipeline.effective_tau(cfg, slice_),
        mode=cfg.aggregation,
        seed=pipeline.derive_seed(cfg.seed, "ari"),
    )
    out = _out_dir(cfg)
    (out / "report.txt").write_text(report.to_kv_text())
    print(report.to_kv_text(), end="")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = pipeline.run_task(cfg)
    print(report.to_kv_text(), end="")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    rows = pipeline.run_ablation(cfg)
    print("variant," + metrics.MetricReport.csv_header())
    for rung, rep in rows:
        print(f"{rung},{rep.to_csv_row()}")
    print(f"table in {Path(cfg.out_dir) / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stinr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        _add_common(p)
        if name == "degrade":
            p.add_argument("--kind", choices=("spatial_split", "gene_mask", "gaussian_noise"))
        if name == "infer":
            p.add_argument("--coords", required=True, help="coordinates CSV to predict at")
        if name == "evaluate":
            p.add_argument("--pred", required=True, help="prediction triplet file")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except StinrError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
