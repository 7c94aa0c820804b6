"""Command-line entry point: ``lulcseg <subcommand> [flags]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .cloudmask import QaBitSpec, cloud_mask_otsu, cloud_mask_qa
from .errors import ConfigParseError, LulcError, UnknownSubcommand, UsageError
from .raster import extract_band, load_label_map, load_raster, save_label_map, save_raster
from .segnet import ModelConfig, build_model, load_checkpoint
from .tiling import (
    SplitManifest,
    read_tile_store,
    stratified_split,
    tile_mosaic,
    write_tile_store,
)
from .trainer import TrainConfig, predict_raster, train

SUBCOMMANDS = ("tile", "split", "cloudmask", "train", "predict", "evaluate", "report", "demo")


@dataclass
class PipelineConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    tiling: dict = field(default_factory=dict)
    cloudmask: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigParseError(f"config {path} must be a JSON object")
        unknown = set(data) - {"seed", "model", "train", "tiling", "cloudmask"}
        if unknown:
            raise ConfigParseError(f"unknown config sections: {sorted(unknown)}")
        return cls(**data)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", type=Path, help="JSON config with seed/model/train/tiling/cloudmask sections")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: all cores)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lulcseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("tile", help="cut a raster + label map into tiles")
    _common(p)
    p.add_argument("--raster", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--min-valid-fraction", type=float)

    p = sub.add_parser("split", help="stratified train/validation split of a tile store")
    _common(p)
    p.add_argument("--tiles", type=Path, required=True)
    p.add_argument("--ratio", type=float)

    p = sub.add_parser("cloudmask", help="cloud labels from Otsu on the blue band or QA bits")
    _common(p)
    p.add_argument("--raster", type=Path, required=True)
    p.add_argument("--method", choices=("otsu", "qa"))
    p.add_argument("--blue-band", type=int)
    p.add_argument("--qa-band", type=int)
    p.add_argument("--cloud-bit", type=int)
    p.add_argument("--conf-bits", type=str, help="LO,HI")
    p.add_argument("--conf-min", type=int)

    p = sub.add_parser("train", help="train a model on a tile store")
    _common(p)
    p.add_argument("--tiles", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--output-stride", type=int)
    p.add_argument("--decoder", choices=("modified_unet", "plain_unet"))
    p.add_argument("--widths", type=str, help="comma-separated encoder widths")
    p.add_argument("--epochs", type=str, help="comma-separated epochs per phase")
    p.add_argument("--lr", type=str, help="comma-separated learning rate per phase")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-transform", action="store_true")

    p = sub.add_parser("predict", help="label a full raster with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--raster", type=Path, required=True)

    p = sub.add_parser("evaluate", help="score a predicted map against ground truth")
    _common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--tile-size", type=int, help="per-tile aggregation on this grid (default: pooled)")

    p = sub.add_parser("report", help="print an evaluation directory as tables")
    _common(p)
    p.add_argument("--eval-dir", type=Path, required=True)

    p = sub.add_parser("demo", help="synthetic end-to-end run")
    _common(p)
    p.add_argument("--size", type=int, default=192)
    p.add_argument("--epochs", type=str, default="16,4", help="epochs per phase (lr 1e-3, 1e-4, 1e-5)")
    p.add_argument("--generate-only", action="store_true", help="only write the synthetic raster and labels")
    return parser


def _ints(text):
    return [int(v) for v in text.split(",")]


def _floats(text):
    return [float(v) for v in text.split(",")]


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_tile(args, cfg):
    t = cfg.tiling
    size = args.tile_size or t.get("tile_size", 224)
    stride = args.stride or t.get("stride", size)
    mvf = args.min_valid_fraction if args.min_valid_fraction is not None else t.get("min_valid_fraction", 0.0)
    raster = load_raster(args.raster)
    labels = load_label_map(args.labels)
    tileset = tile_mosaic(raster, labels, size, stride, mvf)
    write_tile_store(tileset, args.out, palette=labels.palette)
    print(f"wrote {len(tileset)} tiles ({size}px, stride {stride}) to {args.out}")


def cmd_split(args, cfg):
    ratio = args.ratio if args.ratio is not None else cfg.tiling.get("train_ratio", 0.9)
    tileset, _ = read_tile_store(args.tiles)
    manifest = stratified_split(tileset, ratio, cfg.seed)
    _write_json(args.out / "split.json", manifest.to_json())
    print(f"train {len(manifest.train_ids)} / validation {len(manifest.validation_ids)} -> {args.out / 'split.json'}")


def cmd_cloudmask(args, cfg):
    c = cfg.cloudmask
    method = args.method or c.get("method", "otsu")
    raster = load_raster(args.raster)
    if method == "otsu":
        band = args.blue_band if args.blue_band is not None else c.get("blue_band", 0)
        mask = cloud_mask_otsu(raster, band)
        print(f"otsu threshold {mask.threshold}")
    else:
        band = args.qa_band if args.qa_band is not None else c.get("qa_band", raster.bands - 1)
        conf = args.conf_bits or c.get("conf_bits", "5,6")
        spec = QaBitSpec(
            cloud_bit=args.cloud_bit if args.cloud_bit is not None else c.get("cloud_bit", 4),
            confidence_bits=tuple(_ints(conf)) if conf not in ("", "none", None) else None,
            confidence_min=args.conf_min if args.conf_min is not None else c.get("conf_min", 3),
        )
        mask = cloud_mask_qa(extract_band(raster, band), spec)
    save_label_map(mask.to_label_map(), args.out / "cloudmask.bsq")
    print(f"cloud fraction {mask.flags.mean():.4f} -> {args.out / 'cloudmask.bsq'}")


def _model_config(args, cfg, tileset, num_classes):
    m = dict(cfg.model)
    m.setdefault("input_channels", int(tileset.tiles[0].image.shape[0]))
    m["tile_size"] = tileset.tile_size
    if num_classes is not None:
        m["num_classes"] = num_classes
    if getattr(args, "output_stride", None):
        m["output_stride"] = args.output_stride
    if getattr(args, "decoder", None):
        m["decoder_variant"] = args.decoder
    if getattr(args, "widths", None):
        m["encoder_widths"] = _ints(args.widths)
    if "num_classes" not in m:
        m["num_classes"] = int(max(t.labels.max() for t in tileset)) + 1
    try:
        return ModelConfig(**m)
    except TypeError as exc:
        raise ConfigParseError(f"bad model section: {exc}") from exc


def _train_config(args, cfg):
    t = dict(cfg.train)
    phases = [tuple(p) for p in t.pop("phases", [(1e-4, 30), (1e-5, 30)])]
    if args.epochs or args.lr:
        epochs = _ints(args.epochs) if args.epochs else [ep for _, ep in phases]
        lrs = _floats(args.lr) if args.lr else [lr for lr, _ in phases][: len(epochs)]
        if len(epochs) != len(lrs):
            raise ConfigParseError("--epochs and --lr need the same number of phases")
        phases = list(zip(lrs, epochs))
    if args.batch_size:
        t["batch_size"] = args.batch_size
    if args.no_transform:
        t["transform_enabled"] = False
    t["seed"] = cfg.seed
    try:
        return TrainConfig(phases=tuple(phases), **t)
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(f"bad train section: {exc}") from exc


def cmd_train(args, cfg):
    tileset, _ = read_tile_store(args.tiles)
    try:
        manifest = SplitManifest.from_json(json.loads(args.split.read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigParseError(f"cannot read split manifest {args.split}: {exc}") from exc
    model_cfg = _model_config(args, cfg, tileset, args.num_classes)
    model = build_model(model_cfg, seed=cfg.seed)
    result = train(model, tileset, manifest, _train_config(args, cfg), out_dir=args.out, log=print)
    print(f"best epoch {result.best_epoch} score {result.best_val_oa:.4f}; checkpoints in {args.out}")


def cmd_predict(args, cfg):
    model = load_checkpoint(args.checkpoint)
    raster = load_raster(args.raster)
    labels = predict_raster(model, raster)
    save_label_map(labels, args.out / "prediction.bsq")
    print(f"wrote {labels.height}x{labels.width} prediction to {args.out / 'prediction.bsq'}")


def evaluate_maps(pred, truth, num_classes, out_dir: Path, tile_size=None):
    names = truth.palette.names if len(truth.palette) == num_classes else None
    pooled = metrics.confusion(pred, truth, num_classes)
    if tile_size:
        tiles = [cm for cm in metrics.tile_confusions(pred, truth, num_classes, tile_size) if cm.total]
        report = metrics.aggregate([metrics.report_from_confusion(cm) for cm in tiles], class_names=names)
    else:
        report = metrics.report_from_confusion(pooled, names)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "confusion.csv").write_text(metrics.confusion_csv(pooled))
    (out_dir / "per_class.csv").write_text(report.per_class_csv())
    (out_dir / "summary.json").write_text(report.summary_json())
    (out_dir / "class_frequency.csv").write_text(metrics.class_frequency_csv(pooled, names))
    return report


def cmd_evaluate(args, cfg):
    pred = load_label_map(args.pred)
    truth = load_label_map(args.truth)
    n = args.num_classes or max(len(truth.palette), len(pred.palette))
    report = evaluate_maps(pred, truth, n, args.out, args.tile_size)
    print(report.summary_json(), end="")


def render_report(eval_dir: Path) -> str:
    summary = json.loads((eval_dir / "summary.json").read_text())
    lines = [f"Overall accuracy: {summary['oa']:.2f}%  ({summary['method']})", ""]
    lines.append(f"{'':20s}{'CSI':>10s}{'Precision':>11s}{'Recall':>10s}{'F1':>10s}")
    for block in ("average", "weighted_average"):
        vals = summary[block]
        cells = "".join(f"{'-' if vals[m] is None else format(vals[m], '.2f'):>{w}s}"
                        for m, w in (("csi", 10), ("precision", 11), ("recall", 10), ("f1", 10)))
        lines.append(f"{block.replace('_', ' '):20s}{cells}")
    per_class = eval_dir / "per_class.csv"
    if per_class.is_file():
        lines += ["", per_class.read_text().rstrip()]
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg):
    print(render_report(args.eval_dir), end="")


def cmd_demo(args, cfg):
    from .synthetic import make_scene
    from .tiling import stratified_split, tile_mosaic

    out = args.out
    raster, land, clouds = make_scene(args.size, args.size, bands=4, num_land=4, seed=cfg.seed)
    save_raster(raster, out / "scene.bsq")
    save_label_map(land, out / "labels_land.bsq")
    if args.generate_only:
        print(f"wrote synthetic {args.size}x{args.size} scene to {out}")
        return
    # cloud labels from the blue band are merged into the land-cover labels
    mask = cloud_mask_otsu(raster, 0)
    cloud_class = len(land.palette) - 1
    labels_arr = np.where(mask.flags, cloud_class, land.labels).astype(np.uint8)
    labels = type(land)(labels_arr, land.palette)
    save_label_map(labels, out / "labels.bsq")

    tile = cfg.tiling.get("tile_size", 32)
    tileset = tile_mosaic(raster, labels, tile, cfg.tiling.get("stride", tile // 2))
    manifest = stratified_split(tileset, cfg.tiling.get("train_ratio", 0.9), cfg.seed)
    write_tile_store(tileset, out / "tiles", manifest, labels.palette)
    _write_json(out / "split.json", manifest.to_json())

    model_cfg = ModelConfig(
        **{"num_classes": len(labels.palette), "input_channels": raster.bands, "tile_size": tile, **cfg.model}
    )
    model = build_model(model_cfg, seed=cfg.seed)
    epochs = _ints(args.epochs)
    lrs = [1e-3, 1e-4, 1e-5][: len(epochs)]
    tcfg = TrainConfig(phases=tuple(zip(lrs, epochs)), batch_size=8, seed=cfg.seed, **cfg.train)
    result = train(model, tileset, manifest, tcfg, out_dir=out / "train", log=print)
    pred = predict_raster(result.model, raster)
    save_label_map(pred, out / "prediction.bsq")
    report = evaluate_maps(pred, labels, len(labels.palette), out / "eval", tile_size=tile)
    print(render_report(out / "eval"), end="")


COMMANDS = {
    "tile": cmd_tile,
    "split": cmd_split,
    "cloudmask": cmd_cloudmask,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "demo": cmd_demo,
}


def _limit_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
            raise UnknownSubcommand(f"unknown subcommand {argv[0]!r}; choose from {', '.join(SUBCOMMANDS)}")
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            raise UsageError("a subcommand is required")
        cfg = PipelineConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        limiter = _limit_threads(args.threads)
        try:
            COMMANDS[args.command](args, cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
    except LulcError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"IoFailure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
