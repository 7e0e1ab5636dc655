"""Command-line entry point wiring the pipeline stages together.

Subcommands: ``generate``, ``train-backbone``, ``train-head``,
``evaluate``, ``report``. Every option can also be supplied through a JSON
(or, on Python 3.11+, TOML) config file; explicit flags win over the file.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .datagen import DatagenConfig, build_dataset, load_manifest
from .errors import ConfigError, EmptyInput, FormatError, NonFiniteLoss
from .evaluator import (
    FAILURE_SENTINEL,
    METRIC_KINDS,
    boxplot_svg,
    evaluate_ground_truth,
    evaluate_model,
    read_pairs_csv,
    summarize,
    write_pairs_csv,
    write_summary_json,
)
from .network import AlignmentNet, ModelConfig
from .trainer import BACKBONE_LOSSES, TrainConfig, train_backbone, train_head

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ImportError as exc:
            raise ConfigError("TOML config needs Python 3.11+; use JSON instead") from exc
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    try:
        with open(p, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _merge(args: argparse.Namespace, file_cfg: dict, key: str, default):
    """Flag beats config file beats default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in file_cfg:
        return file_cfg[key]
    return default


def _require(args, file_cfg, key):
    val = _merge(args, file_cfg, key, None)
    if val is None:
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return val


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = DatagenConfig(
        target_size=int(_merge(args, file_cfg, "target_size", 192)),
        source_size=int(_merge(args, file_cfg, "source_size", 128)),
        jitter_radius=float(_merge(args, file_cfg, "jitter_radius", 32.0)),
        pairs_per_image=int(_merge(args, file_cfg, "pairs_per_image", 10)),
        rng_seed=int(_merge(args, file_cfg, "seed", 0)),
        test_fraction=float(_merge(args, file_cfg, "test_fraction", 0.25)),
    )
    cfg.validate()
    input_dir = Path(_require(args, file_cfg, "input_dir"))
    out_dir = Path(_require(args, file_cfg, "out_dir"))
    manifest = build_dataset(input_dir, out_dir, cfg)
    rows = [json.loads(line) for line in open(manifest, encoding="utf-8")]
    n_train = sum(1 for r in rows if r["split"] == "train")
    n_test = len(rows) - n_train
    print(f"{len(rows)} pairs (train {n_train} / test {n_test})")
    print(f"manifest {manifest}")
    print(f"manifest sha256 {_sha256(manifest)}")
    return EXIT_OK


def _train_config(args, file_cfg) -> TrainConfig:
    cfg = TrainConfig(
        epochs=int(_merge(args, file_cfg, "epochs", 100)),
        batch_size=int(_merge(args, file_cfg, "batch_size", 8)),
        learning_rate=float(_merge(args, file_cfg, "learning_rate", 1e-4)),
        gamma=float(_merge(args, file_cfg, "gamma", 1.0)),
        head=str(_merge(args, file_cfg, "head", "corners")),
        scale=float(_merge(args, file_cfg, "scale", 1.0)),
        rng_seed=int(_merge(args, file_cfg, "seed", 0)),
        backbone_frozen_in_stage2=not bool(
            _merge(args, file_cfg, "finetune_backbone", False)
        ),
        checkpoint_dir=str(_require(args, file_cfg, "checkpoint_dir")),
        backbone_loss=str(_merge(args, file_cfg, "backbone_loss", "sim")),
    )
    cfg.validate()
    return cfg


def _jsonl_logger(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "a", encoding="utf-8")

    def log(event: dict):
        fh.write(json.dumps(event) + "\n")
        fh.flush()

    return log, fh


def cmd_train_backbone(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_config(args, file_cfg)
    manifest = Path(_require(args, file_cfg, "manifest"))
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    log, fh = _jsonl_logger(Path(cfg.checkpoint_dir) / "train_backbone.log.jsonl")
    try:
        report = train_backbone(manifest, cfg, log_fn=log)
    finally:
        fh.close()
    print(f"backbone checkpoint {report.checkpoint_path}")
    print(f"epochs {len(report.epoch_losses)}  best_epoch {report.best_epoch}  "
          f"best_loss {report.best_loss:.6g}  wall_clock {report.wall_clock_s:.1f}s")
    return EXIT_OK


def cmd_train_head(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _train_config(args, file_cfg)
    manifest = Path(_require(args, file_cfg, "manifest"))
    backbone = Path(_require(args, file_cfg, "backbone_checkpoint"))
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    if not backbone.exists():
        raise ConfigError(f"backbone checkpoint not found: {backbone}")
    log, fh = _jsonl_logger(Path(cfg.checkpoint_dir) / "train_head.log.jsonl")
    try:
        report = train_head(manifest, cfg, backbone, log_fn=log)
    finally:
        fh.close()
    print(f"model checkpoint {report.checkpoint_path}")
    print(f"epochs {len(report.epoch_losses)}  best_epoch {report.best_epoch}  "
          f"best_loss {report.best_loss:.6g}  skipped_steps {report.skipped_steps}  "
          f"wall_clock {report.wall_clock_s:.1f}s")
    return EXIT_OK


def load_model(checkpoint_path) -> AlignmentNet:
    """Rebuild a model from a checkpoint's metadata and tensors."""
    tensors, meta = load_checkpoint(checkpoint_path)
    mc = ModelConfig(
        head=meta.get("head", "corners"),
        scale=float(meta.get("scale", 1.0)),
        dropout=float(meta.get("dropout", 0.2)),
        dtype=meta.get("dtype", "float32"),
    )
    model = AlignmentNet(mc, seed=0)
    model.load_state_tensors(tensors)
    return model


def cmd_evaluate(args) -> int:
    file_cfg = _load_config_file(args.config)
    metric_kind = str(_merge(args, file_cfg, "metric_kind", "euclidean"))
    if metric_kind not in METRIC_KINDS:
        raise ConfigError(f"metric_kind must be one of {METRIC_KINDS}")
    sentinel = float(_merge(args, file_cfg, "sentinel", FAILURE_SENTINEL))
    split = str(_merge(args, file_cfg, "split", "test"))
    inject = bool(_merge(args, file_cfg, "predict_ground_truth", False))
    manifest = Path(_require(args, file_cfg, "manifest"))
    out_dir = Path(_require(args, file_cfg, "out_dir"))
    checkpoint = _merge(args, file_cfg, "checkpoint", None)
    if checkpoint is None and not inject:
        raise ConfigError("missing required option --checkpoint (or --predict-ground-truth)")
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")

    pairs = load_manifest(manifest, split=split)
    if not pairs:
        raise EmptyInput(f"manifest has no pairs in split {split!r}")
    if inject:
        summary, records = evaluate_ground_truth(pairs, metric_kind=metric_kind,
                                                 sentinel=sentinel)
    else:
        model = load_model(checkpoint)
        summary, records = evaluate_model(model, pairs, metric_kind=metric_kind,
                                          sentinel=sentinel)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pairs_csv(out_dir / "pairs.csv", records)
    write_summary_json(out_dir / "summary.json", summary)
    boxplot_svg(out_dir / "boxplot.svg", {split: [r.ace for r in records]})
    print(f"evaluated {summary.n_pairs} pairs ({metric_kind})")
    print(f"mean {summary.mean:.4g}  median {summary.median:.4g}  "
          f"q1 {summary.q1:.4g}  q3 {summary.q3:.4g}  max {summary.max:.4g}  "
          f"outliers {summary.outlier_count}")
    print(f"reports in {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    file_cfg = _load_config_file(args.config)
    metric_kind = str(_merge(args, file_cfg, "metric_kind", "euclidean"))
    if metric_kind not in METRIC_KINDS:
        raise ConfigError(f"metric_kind must be one of {METRIC_KINDS}")
    pairs_csv = Path(_require(args, file_cfg, "pairs_csv"))
    out_dir = Path(_require(args, file_cfg, "out_dir"))
    if not pairs_csv.exists():
        raise FileNotFoundError(f"pairs csv not found: {pairs_csv}")
    records = read_pairs_csv(pairs_csv)
    if not records:
        raise EmptyInput(f"{pairs_csv} holds no records")
    summary = summarize([r.ace for r in records], metric_kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary_json(out_dir / "summary.json", summary)
    boxplot_svg(out_dir / "boxplot.svg", {pairs_csv.stem: [r.ace for r in records]})
    print(f"summarized {summary.n_pairs} pairs from {pairs_csv}")
    print(f"reports in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalign",
        description="Cross-modality image alignment: data generation, two-stage "
        "training, and corner-error evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON (or TOML on 3.11+) config file; flags override")

    g = sub.add_parser("generate", help="build a synthetic dataset from registered pairs")
    add_common(g)
    g.add_argument("--input-dir", help="directory of <stem>_rgb.png / <stem>_ir.png pairs")
    g.add_argument("--out-dir", help="output directory for pair images + manifest")
    g.add_argument("--pairs-per-image", type=int)
    g.add_argument("--jitter-radius", type=float)
    g.add_argument("--target-size", type=int)
    g.add_argument("--source-size", type=int)
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    for name, func, extra in (
        ("train-backbone", cmd_train_backbone, False),
        ("train-head", cmd_train_head, True),
    ):
        t = sub.add_parser(name, help=f"{name.replace('-', ' ')} stage")
        add_common(t)
        t.add_argument("--manifest")
        t.add_argument("--checkpoint-dir")
        t.add_argument("--epochs", type=int)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--learning-rate", type=float)
        t.add_argument("--scale", type=float)
        t.add_argument("--seed", type=int)
        t.add_argument("--head", choices=["corners", "homography"])
        t.add_argument("--backbone-loss", choices=list(BACKBONE_LOSSES))
        if extra:
            t.add_argument("--backbone-checkpoint")
            t.add_argument("--gamma", type=float)
            t.add_argument(
                "--finetune-backbone",
                action="store_const",
                const=True,
                help="update branch parameters during stage 2 (default: frozen)",
            )
        t.set_defaults(func=func)

    e = sub.add_parser("evaluate", help="run a checkpoint over a manifest split")
    add_common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--split", choices=["train", "test"])
    e.add_argument("--metric-kind", choices=list(METRIC_KINDS))
    e.add_argument("--sentinel", type=float)
    e.add_argument("--out-dir")
    e.add_argument(
        "--predict-ground-truth",
        action="store_const",
        const=True,
        help="bypass the model and inject stored ground truth (sanity check)",
    )
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="recompute summary + box plot from a pairs CSV")
    add_common(r)
    r.add_argument("--pairs-csv")
    r.add_argument("--out-dir")
    r.add_argument("--metric-kind", choices=list(METRIC_KINDS))
    r.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmptyInput) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())
