"""Command-line entry point: ``polypseg <subcommand> --config FILE [overrides]``.

Failures print one JSON line on stderr, ``{"error": kind, "key": ..., "message": ...}``,
and exit with 2 (config), 3 (data) or 4 (runtime/numeric).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .config import ExperimentConfig
from .dataset import DatasetManifest, scan_dataset, split_manifest
from .errors import ConfigError, PolypSegError
from .evaluation import MetricsReport, compare, evaluate, predict
from .models import build_model, encoder_names, load_checkpoint
from .training import resume, train

FLAG_KEYS = {
    "root": "dataset.root",
    "encoder": "model.encoder",
    "output_dir": "output.dir",
    "epochs": "train.epochs",
    "split_seed": "split.seed",
    "threshold": "eval.threshold",
}


class UsageError(ConfigError):
    kind = "usage-error"


class UnknownSubcommandError(UsageError):
    kind = "unknown-subcommand"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            raise UnknownSubcommandError(message, key="subcommand")
        raise UsageError(message)


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}", key=item)
        out[key.strip()] = yaml.safe_load(value)
    return out


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    overrides = _parse_set(getattr(args, "set", None))
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return cfg.with_overrides(overrides) if overrides else cfg


def _build(cfg: ExperimentConfig):
    kwargs = {}
    if cfg.model_name == "unet_baseline":
        kwargs = {"base_channels": int(cfg["model.base_channels"]), "depth": int(cfg["model.depth"])}
    elif cfg.model_name == "segnet_baseline":
        kwargs = {"base_channels": int(cfg["model.base_channels"])}
    else:
        kwargs = {
            "pretrained": bool(cfg["model.pretrained"]),
            "weights_path": cfg["model.weights"],
            "decoder_channels": tuple(cfg["model.decoder_channels"]),
            "freeze_encoder": bool(cfg["model.freeze_encoder"]),
        }
    return build_model(cfg.model_name, cfg.preprocess().network_input, seed=int(cfg["model.seed"]), **kwargs)


def _manifest(cfg: ExperimentConfig, rebuild: bool = False) -> DatasetManifest:
    path = cfg.manifest_path
    if path.exists() and not rebuild:
        return DatasetManifest.load(path)
    root = cfg.dataset_root()
    manifest = split_manifest(
        scan_dataset(root, cfg["dataset.pattern"]),
        cfg["split.test_fraction"], cfg["split.val_fraction"], int(cfg["split.seed"]),
    )
    manifest.save(path)
    return manifest


def cmd_prepare(args, cfg):
    manifest = _manifest(cfg, rebuild=True)
    counts = {s: len(manifest.ids(s)) for s in ("train", "val", "test")}
    print(f"manifest {cfg.manifest_path}: {len(manifest)} entries "
          f"(train={counts['train']}, val={counts['val']}, test={counts['test']})")


def cmd_train(args, cfg):
    cfg.dataset_root()
    manifest = _manifest(cfg)
    ckdir = cfg.run_dir / "checkpoints"
    cfg.save(cfg.run_dir / "config.yaml")
    tcfg = cfg.train_config(checkpoint_dir=ckdir)
    if args.resume:
        best, history = resume(ckdir / "last.ckpt", manifest, tcfg, encoder_name=cfg.model_name,
                               config_hash=cfg.config_hash)
    else:
        best, history = train(_build(cfg), manifest, tcfg, config_hash=cfg.config_hash)
    rec = history.best
    print(f"best epoch {rec.epoch}: val_dice={rec.val_dice:.4f} -> {ckdir / 'best.ckpt'}")


def _load_model(cfg, checkpoint):
    path = Path(checkpoint) if checkpoint else cfg.run_dir / "checkpoints" / "best.ckpt"
    return load_checkpoint(path)


def cmd_evaluate(args, cfg):
    model = _load_model(cfg, args.checkpoint)
    manifest = _manifest(cfg)
    export = cfg.run_dir / "masks" if args.export_masks else None
    report = evaluate(
        model, manifest, split=cfg["eval.split"], threshold=float(cfg["eval.threshold"]),
        preprocess=cfg.preprocess(), batch_size=int(cfg["eval.batch_size"]),
        config_hash=cfg.config_hash, export_dir=export,
    )
    out = report.write(cfg.output_dir / report.model_name)
    m, p = report.aggregate_mean, report.aggregate_pooled
    print(f"{report.model_name} on {report.n_test} {report.split} images: "
          f"accuracy={100 * m.accuracy:.2f}% dice={100 * m.dice:.2f}% jaccard={100 * m.jaccard:.2f}% "
          f"(pooled dice={100 * p.dice:.2f}%) -> {out / 'report.json'}")


def cmd_predict(args, cfg):
    model = _load_model(cfg, args.checkpoint)
    out = predict(model, args.image, args.output, float(cfg["eval.threshold"]), cfg.preprocess())
    print(out)


def cmd_compare(args, cfg):
    paths = [Path(p) for p in args.reports] or sorted(cfg.output_dir.glob("*/report.json"))
    if not paths:
        raise ConfigError(f"no report.json found under {cfg.output_dir}", key="output.dir")
    table = compare([MetricsReport.read(p) for p in paths], aggregate=args.aggregate,
                    include_reference=args.reference)
    out = Path(args.out) if args.out else cfg.output_dir / "comparison.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_csv(), encoding="utf-8")
    print(table.render())


def cmd_list_encoders(args, cfg):
    for name in encoder_names():
        print(name)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polypseg", description="U-Net backbone comparison for binary polyp segmentation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--root", help="dataset.root")
        p.add_argument("--encoder", help="model.encoder")
        p.add_argument("--output-dir", help="output.dir")
        p.set_defaults(fn=fn)
        return p

    add("prepare", cmd_prepare, "scan the dataset and write the split manifest").add_argument(
        "--split-seed", type=int)
    p = add("train", cmd_train, "train a model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/last.ckpt")
    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint and write report.json/report.csv")
    p.add_argument("--checkpoint")
    p.add_argument("--threshold", type=float)
    p.add_argument("--export-masks", action="store_true")
    p = add("predict", cmd_predict, "write a full-resolution mask for one image")
    p.add_argument("--checkpoint")
    p.add_argument("--image", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--threshold", type=float)
    p = add("compare", cmd_compare, "tabulate several reports")
    p.add_argument("reports", nargs="*")
    p.add_argument("--aggregate", choices=("mean", "pooled"), default="mean")
    p.add_argument("--reference", action="store_true", help="append published reference rows")
    p.add_argument("--out")
    add("list-encoders", cmd_list_encoders, "print registered encoder names")
    return parser


def _fail(exc: PolypSegError) -> int:
    payload = {"error": exc.kind, "message": str(exc)}
    key = getattr(exc, "key", None) or exc.details.get("key")
    if key:
        payload["key"] = key
    print(json.dumps(payload), file=sys.stderr)
    return exc.exit_code


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        args.fn(args, cfg)
    except PolypSegError as exc:
        return _fail(exc)
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
