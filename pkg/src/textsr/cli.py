"""Command-line interface.

Subcommands: prepare (build or ingest a dataset), train (one network),
grid (named experiment grids), infer (super-resolve images), combine
(greedy ensemble search), evaluate (metric reports).

Exit codes are a stable scripting contract: 0 success, 2 configuration or
usage error, 3 I/O error, 4 numerical divergence.

Options may come from a flat `key = value` config file (--config); explicit
command-line flags win over file values. Unknown config keys are rejected
before any work starts.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ensemble, imaging, metrics, network, training
from .imaging import DatasetManifest, ManifestEntry, PgmError
from .network import CheckpointError, SpecParseError
from .training import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

RUN_ROOT_ENV = "TEXTSR_RUN_ROOT"


class ConfigError(Exception):
    """Invalid configuration or usage."""


class DataError(Exception):
    """Dataset or artifact files are missing or inconsistent."""


# configuration keys accepted in config files, with coercions
CONFIG_SCHEMA = {
    "spec": str,
    "seed": int,
    "lr_last": float,
    "lr_other": float,
    "weight_std": float,
    "batch_size": int,
    "max_iterations": int,
    "checkpoint_every": int,
    "eval_every": int,
    "manifest": str,
    "val_manifest": str,
    "out_dir": str,
    "border_mode": str,
    "scorer": str,
    "ocr_cmd": str,
    "rounds": int,
}

CONFIG_DEFAULTS = {
    "seed": 0,
    "lr_last": 1e-5,
    "lr_other": 1e-4,
    "weight_std": 0.001,
    "batch_size": 128,
    "max_iterations": 5000,
    "checkpoint_every": 1000,
    "eval_every": 100,
    "border_mode": "keep",
    "scorer": "psnr",
    "rounds": 14,
}

# named experiment grids over the supported architecture families
GRIDS = {
    "filter-size": [
        "64(9)-32(1)-1(5)",
        "64(9)-32(3)-1(5)",
        "64(9)-32(5)-1(5)",
        "64(9)-32(7)-1(5)",
    ],
    "filter-count": [
        "64(9)-32(7)-1(5)",
        "128(9)-32(7)-1(5)",
        "64(9)-64(7)-1(5)",
    ],
    "depth": [
        "64(9)-32(7)-16(1)-1(5)",
        "64(9)-32(7)-16(3)-1(5)",
        "64(9)-32(7)-16(5)-1(5)",
        "64(9)-32(5)-16(5)-1(5)",
        "64(11)-32(9)-16(7)-1(5)",
        "64(11)-32(9)-16(9)-1(5)",
        "64(13)-32(11)-16(9)-1(5)",
        "64(15)-32(13)-16(11)-1(5)",
    ],
}

INIT_SEEDS_DEFAULT_SPEC = "64(9)-32(7)-16(5)-1(5)"


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------

def load_config_file(path) -> dict:
    """Parse a flat `key = value` file against CONFIG_SCHEMA."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_SCHEMA[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return values


def resolve_config(args, keys) -> dict:
    """Merge defaults, config-file values, and command-line flags (flags win)."""
    cfg = {k: CONFIG_DEFAULTS[k] for k in keys if k in CONFIG_DEFAULTS}
    if getattr(args, "config", None):
        file_values = load_config_file(args.config)
        for key, value in file_values.items():
            if key in keys:
                cfg[key] = value
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = flag_value
    if cfg.get("border_mode") not in (None, *metrics.BORDER_MODES):
        raise ConfigError(f"border_mode must be one of {metrics.BORDER_MODES}")
    if cfg.get("scorer") not in (None, "psnr", "external"):
        raise ConfigError("scorer must be 'psnr' or 'external'")
    return cfg


def _write_config_snapshot(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            if cfg[key] is not None:
                fh.write(f"{key} = {cfg[key]}\n")


def _out_dir(args, command: str) -> Path:
    explicit = getattr(args, "out_dir", None)
    if explicit:
        path = Path(explicit)
    else:
        root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = root / f"{command}-{stamp}"
        suffix = 0
        while path.exists():
            suffix += 1
            path = root / f"{command}-{stamp}-{suffix}"
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# shared data loading
# ---------------------------------------------------------------------------

def _load_manifest(path) -> DatasetManifest:
    try:
        return imaging.load_manifest(path)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _load_pair(entry: ManifestEntry):
    """(lr_upscaled, hr) in [0, 1]; shapes must agree after x2 upscaling."""
    hr = imaging.load_pgm(entry.hr_path)
    lr_up = imaging.bicubic_upscale_x2(imaging.load_pgm(entry.lr_path))
    if lr_up.shape != hr.shape:
        raise DataError(
            f"{entry.image_id}: upscaled LR {lr_up.shape} does not match HR {hr.shape}")
    return lr_up, hr


def _training_pairs(manifest: DatasetManifest, spec) -> list:
    pairs = []
    for entry in manifest.entries:
        lr_up, hr = _load_pair(entry)
        pairs.extend(training.extract_patch_pairs(hr, lr_up, spec, entry.image_id))
    return pairs


def _validation_images(manifest: DatasetManifest) -> list:
    return [_load_pair(entry) for entry in manifest.entries]


def _eval_items(manifest: DatasetManifest) -> list:
    items = []
    for entry in manifest.entries:
        lr_up, hr = _load_pair(entry)
        items.append(ensemble.EvalItem(entry.image_id, lr_up, hr, entry.text or None))
    return items


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def _relativize(entries, base: Path) -> list[ManifestEntry]:
    return [ManifestEntry(e.image_id,
                          os.path.relpath(e.hr_path, base),
                          os.path.relpath(e.lr_path, base),
                          e.text) for e in entries]


def _ingest(src_dir: Path) -> list[ManifestEntry]:
    hr_files = sorted(src_dir.glob("*_hr.pgm"))
    if not hr_files:
        raise DataError(f"no *_hr.pgm files found in {src_dir}")
    entries, missing = [], []
    for hr_path in hr_files:
        image_id = hr_path.name[:-len("_hr.pgm")]
        lr_path = hr_path.with_name(f"{image_id}_lr.pgm")
        if not lr_path.exists():
            missing.append(image_id)
            continue
        txt_path = hr_path.with_name(f"{image_id}.txt")
        text = txt_path.read_text(encoding="utf-8").strip() if txt_path.exists() else ""
        entries.append(ManifestEntry(image_id, str(hr_path), str(lr_path), text))
    if missing:
        raise DataError(f"missing LR partners for: {', '.join(missing)}")
    return entries


def cmd_prepare(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        manifest = imaging.generate_synthetic_corpus(args.count, args.seed, out)
        entries = manifest.entries
    elif args.ingest:
        entries = _ingest(Path(args.ingest))
        imaging.save_manifest(DatasetManifest(_relativize(entries, out)), out / "manifest.tsv")
    else:
        raise ConfigError("prepare needs --synthetic or --ingest DIR")
    total = len(entries)
    if not 0 < args.val_count < total:
        raise ConfigError(
            f"--val-count must be in 1..{total - 1} for {total} entries, got {args.val_count}")
    train_m, val_m = imaging.split_dataset(DatasetManifest(entries), args.val_count, args.seed)
    imaging.save_manifest(DatasetManifest(_relativize(train_m.entries, out), "train"),
                          out / "manifest_train.tsv")
    imaging.save_manifest(DatasetManifest(_relativize(val_m.entries, out), "validation"),
                          out / "manifest_val.tsv")
    print(f"prepared {total} image pairs in {out} "
          f"(train {len(train_m.entries)}, validation {len(val_m.entries)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / grid
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ("spec", "seed", "lr_last", "lr_other", "weight_std", "batch_size",
               "max_iterations", "checkpoint_every", "eval_every",
               "manifest", "val_manifest", "out_dir")


def _train_one(cfg: dict, out: Path, quiet: bool = False):
    spec = network.parse_spec(cfg["spec"])
    if not quiet:
        print(f"architecture {network.format_spec(spec)}: "
              f"{network.param_count(spec):,} weights "
              f"({network.param_count(spec, include_biases=True):,} parameters with biases)")
    manifest = _load_manifest(cfg["manifest"])
    pairs = _training_pairs(manifest, spec)
    if not pairs:
        raise DataError("no training patches could be extracted")
    val_images = []
    if cfg.get("val_manifest"):
        val_images = _validation_images(_load_manifest(cfg["val_manifest"]))
    config = training.TrainConfig(
        spec=spec,
        lr_last=cfg["lr_last"],
        lr_other=cfg["lr_other"],
        weight_std=cfg["weight_std"],
        seed=cfg["seed"],
        batch_size=cfg["batch_size"],
        max_iterations=cfg["max_iterations"],
        checkpoint_every=cfg["checkpoint_every"],
        eval_every=cfg["eval_every"],
    )
    result = training.train(config, pairs, val_images, checkpoint_dir=out / "checkpoints")
    training.write_convergence_csv(result.records, out / "convergence.csv")
    if not quiet and result.records:
        final = result.records[-1]
        print(f"finished at iteration {final.iteration}: train MSE {final.train_mse:.6g}, "
              f"validation PSNR {final.val_psnr:.4g} dB")
    return result


def cmd_train(args) -> int:
    cfg = resolve_config(args, _TRAIN_KEYS)
    if not cfg.get("spec"):
        raise ConfigError("train needs --spec (or `spec` in the config file)")
    if not cfg.get("manifest"):
        raise ConfigError("train needs --manifest (or `manifest` in the config file)")
    out = _out_dir(args, "train")
    cfg["out_dir"] = str(out)
    _write_config_snapshot(cfg, out / "config.txt")
    _train_one(cfg, out)
    print(f"run artifacts in {out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = resolve_config(args, _TRAIN_KEYS)
    if not cfg.get("manifest"):
        raise ConfigError("grid needs --manifest (or `manifest` in the config file)")
    if args.specs:
        variants = [(s.strip(), cfg["seed"]) for s in args.specs.split(",") if s.strip()]
    elif args.grid == "init-seeds":
        spec_text = cfg.get("spec") or INIT_SEEDS_DEFAULT_SPEC
        variants = [(spec_text, cfg["seed"] + k) for k in range(args.num_seeds)]
    elif args.grid in GRIDS:
        variants = [(s, cfg["seed"]) for s in GRIDS[args.grid]]
    elif args.grid:
        raise ConfigError(f"unknown grid {args.grid!r}; choose from "
                          f"{', '.join([*GRIDS, 'init-seeds'])} or pass --specs")
    else:
        raise ConfigError("grid needs --grid NAME or --specs LIST")
    out = _out_dir(args, "grid")
    cfg["out_dir"] = str(out)
    _write_config_snapshot(cfg, out / "config.txt")
    merged_rows = []
    summary = []
    for spec_text, seed in variants:
        name = spec_text.replace("(", "_").replace(")", "")
        if args.grid == "init-seeds":
            name = f"{name}-seed{seed}"
        vdir = out / name
        vdir.mkdir(parents=True, exist_ok=True)
        vcfg = dict(cfg, spec=spec_text, seed=seed)
        try:
            result = _train_one(vcfg, vdir, quiet=True)
        except (ConfigError, DataError, DivergenceError, SpecParseError, ValueError) as exc:
            summary.append((name, "failed", str(exc)))
            print(f"[{name}] FAILED: {exc}", file=sys.stderr)
            continue
        summary.append((name, "ok", ""))
        for r in result.records:
            merged_rows.append((name, r.iteration, r.backprop_count, r.train_mse, r.val_psnr))
        print(f"[{name}] done")
    with open(out / "grid.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,iteration,backprops,train_mse,val_psnr\n")
        for name, it, bp, mse, psnr_v in merged_rows:
            fh.write(f"{name},{it},{bp},{mse!r},{psnr_v!r}\n")
    with open(out / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,status,detail\n")
        for name, status, detail in summary:
            fh.write(f"{name},{status},{detail.replace(',', ';')}\n")
    print(f"grid artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def _load_networks(paths) -> list:
    nets = []
    for p in paths:
        ckpt = network.load_checkpoint(p)
        nets.append(ckpt.to_network())
    return nets


def cmd_infer(args) -> int:
    paths = list(args.checkpoint or [])
    if args.combination:
        try:
            lines = Path(args.combination).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read combination file: {exc}") from exc
        base = Path(args.combination).parent
        for line in lines:
            line = line.strip()
            if line and not line.startswith("#"):
                paths.append(line if os.path.isabs(line) else str(base / line))
    if not paths:
        raise ConfigError("infer needs --checkpoint and/or --combination")
    nets = _load_networks(paths)
    if args.spec:
        want = network.format_spec(network.parse_spec(args.spec))
        for p, net in zip(paths, nets):
            have = network.format_spec(net.spec)
            if have != want:
                raise ConfigError(f"checkpoint {p} has architecture {have}, expected {want}")
    inputs = []
    if args.manifest:
        manifest = _load_manifest(args.manifest)
        inputs = [(e.image_id, e.lr_path) for e in manifest.entries]
    for lr_file in args.lr or []:
        inputs.append((Path(lr_file).stem, lr_file))
    if not inputs:
        raise ConfigError("infer needs --manifest and/or --lr images")
    out = _out_dir(args, "infer")
    for image_id, lr_path in inputs:
        lr_up = imaging.bicubic_upscale_x2(imaging.load_pgm(lr_path))
        preds = [network.predict_image(net, lr_up[None])[0] for net in nets]
        sr = ensemble.average_outputs(preds)
        imaging.save_pgm(sr, out / f"{image_id}_sr.pgm")
    print(f"wrote {len(inputs)} super-resolved images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# combine
# ---------------------------------------------------------------------------

_COMBINE_KEYS = ("manifest", "scorer", "ocr_cmd", "rounds", "border_mode", "out_dir", "seed")


def cmd_combine(args) -> int:
    cfg = resolve_config(args, _COMBINE_KEYS)
    paths = list(args.checkpoints or [])
    if args.checkpoint_dir:
        paths.extend(str(p) for p in sorted(Path(args.checkpoint_dir).glob("*.tsr")))
    if not paths:
        raise ConfigError("combine needs --checkpoints and/or --checkpoint-dir")
    if not cfg.get("manifest"):
        raise ConfigError("combine needs --manifest (or `manifest` in the config file)")
    out = _out_dir(args, "combine")
    cfg["out_dir"] = str(out)
    _write_config_snapshot(cfg, out / "config.txt")
    items = _eval_items(_load_manifest(cfg["manifest"]))
    if not items:
        raise DataError("evaluation manifest is empty")
    models = [(p, network.load_checkpoint(p).to_network()) for p in paths]
    pool = ensemble.ModelPool(models, items)
    if cfg["scorer"] == "external":
        if not cfg.get("ocr_cmd"):
            raise ConfigError("--scorer external needs --ocr-cmd")
        scorer = ensemble.ExternalCommandScorer(cfg["ocr_cmd"], out / "ocr_tmp")
    else:
        scorer = ensemble.PsnrScorer(border_mode=cfg["border_mode"])
    try:
        rounds, best = ensemble.greedy_search(pool, scorer, max_rounds=cfg["rounds"])
    except ensemble.GreedySearchError as exc:
        raise DataError(str(exc)) from exc
    with open(out / "rounds.csv", "w", encoding="utf-8") as fh:
        fh.write("round,scorer,score,members\n")
        for k, sc in enumerate(rounds, 1):
            fh.write(f"{k},{sc.scorer_name},{sc.score!r},{';'.join(sc.combination.members)}\n")
    with open(out / "best_combination.txt", "w", encoding="utf-8") as fh:
        for member in best.combination.members:
            fh.write(f"{member}\n")
    print(f"best combination ({best.combination.size} members, "
          f"{best.scorer_name} score {best.score:.6g}) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

_EVAL_KEYS = ("manifest", "border_mode", "out_dir", "ocr_cmd")


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args, _EVAL_KEYS)
    if not cfg.get("manifest"):
        raise ConfigError("evaluate needs --manifest (or `manifest` in the config file)")
    if not args.sr_dir:
        raise ConfigError("evaluate needs --sr-dir with super-resolved images")
    manifest = _load_manifest(cfg["manifest"])
    sr_dir = Path(args.sr_dir)
    border_mode = cfg["border_mode"]
    missing, rows = [], []
    pairs, ids = [], []
    for entry in manifest.entries:
        sr_path = sr_dir / f"{entry.image_id}_sr.pgm"
        if not sr_path.exists():
            sr_path = sr_dir / f"{entry.image_id}.pgm"
        if not sr_path.exists():
            missing.append(entry.image_id)
            continue
        sr = imaging.load_pgm(sr_path)
        hr = imaging.load_pgm(entry.hr_path)
        pairs.append((sr, hr))
        ids.append(entry.image_id)
    if missing:
        raise DataError(f"no super-resolved output for: {', '.join(missing)}")
    reports, summary = metrics.evaluate_set(pairs, border_mode=border_mode)
    ocr_scores = None
    if cfg.get("ocr_cmd"):
        ocr_scores = _ocr_column(cfg["ocr_cmd"], manifest, pairs, ids, sr_dir)
    header = "image_id,psnr,rmse,mssim,border_mode"
    if ocr_scores is not None:
        header += ",ocr_acc"
    rows.append(header)
    for i, (image_id, report) in enumerate(zip(ids, reports)):
        if report is None:
            continue
        row = f"{image_id},{_fmt(report.psnr)},{_fmt(report.rmse)},{_fmt(report.mssim)},{border_mode}"
        if ocr_scores is not None:
            row += f",{_fmt(ocr_scores[i])}"
        rows.append(row)
    mean_row = (f"mean,{_fmt(summary.mean_psnr)},{_fmt(summary.mean_rmse)},"
                f"{_fmt(summary.mean_mssim)},{border_mode}")
    if ocr_scores is not None:
        mean_row += f",{_fmt(float(np.mean(ocr_scores)))}"
    rows.append(mean_row)
    if summary.psnr_excluded:
        print(f"note: {summary.psnr_excluded} identical pair(s) excluded from the PSNR mean")
    if args.baseline:
        base_pairs = []
        for entry in manifest.entries:
            lr_up, hr = _load_pair(entry)
            base_pairs.append((lr_up, hr))
        _, base_summary = metrics.evaluate_set(base_pairs, border_mode=border_mode)
        rows.append(f"bicubic_mean,{_fmt(base_summary.mean_psnr)},{_fmt(base_summary.mean_rmse)},"
                    f"{_fmt(base_summary.mean_mssim)},{border_mode}"
                    + ("," if ocr_scores is not None else ""))
    report_path = Path(args.report) if args.report else None
    text = "\n".join(rows) + "\n"
    if report_path:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(text, encoding="utf-8")
        print(f"wrote report to {report_path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _ocr_column(ocr_cmd: str, manifest, pairs, ids, sr_dir: Path):
    truth = {e.image_id: e.text for e in manifest.entries}
    items = [ensemble.EvalItem(i, p[0], p[1], truth.get(i) or None) for i, p in zip(ids, pairs)]
    scorer = ensemble.ExternalCommandScorer(ocr_cmd, sr_dir / "ocr_tmp")
    scores = []
    for (sr, _), item in zip(pairs, items):
        scores.append(scorer([sr], [item]))
    return scores


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textsr",
        description="Text-image super-resolution: dataset preparation, training, "
                    "inference, ensemble search, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="generate a synthetic corpus or ingest image pairs")
    p.add_argument("--out", dest="out_dir", required=True, help="output dataset directory")
    p.add_argument("--synthetic", action="store_true", help="generate synthetic text strips")
    p.add_argument("--count", type=int, default=100, help="number of synthetic pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ingest", metavar="DIR", help="ingest <id>_hr.pgm/<id>_lr.pgm pairs")
    p.add_argument("--val-count", type=int, default=30, dest="val_count",
                   help="validation split size (default 30)")
    p.set_defaults(func=cmd_prepare)

    def add_train_flags(q):
        q.add_argument("--config", help="flat key = value config file")
        q.add_argument("--manifest", help="training manifest (tsv)")
        q.add_argument("--val-manifest", dest="val_manifest", help="validation manifest (tsv)")
        q.add_argument("--seed", type=int, dest="seed")
        q.add_argument("--lr-last", type=float, dest="lr_last",
                       help="last-layer learning rate (default 1e-5)")
        q.add_argument("--lr-other", type=float, dest="lr_other",
                       help="learning rate for the other layers (default 1e-4)")
        q.add_argument("--weight-std", type=float, dest="weight_std",
                       help="Gaussian init std (default 0.001)")
        q.add_argument("--batch-size", type=int, dest="batch_size")
        q.add_argument("--iterations", type=int, dest="max_iterations")
        q.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
        q.add_argument("--eval-every", type=int, dest="eval_every")
        q.add_argument("--out", dest="out_dir", help="run directory (default under "
                       f"${RUN_ROOT_ENV} or ./runs)")

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--spec", help='architecture, e.g. "64(9)-32(7)-1(5)"')
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run a named experiment grid")
    p.add_argument("--grid", help=f"grid name: {', '.join([*GRIDS, 'init-seeds'])}")
    p.add_argument("--specs", help="explicit comma-separated architecture list")
    p.add_argument("--spec", help="architecture for the init-seeds grid")
    p.add_argument("--num-seeds", type=int, default=3, dest="num_seeds",
                   help="seed count for the init-seeds grid (default 3)")
    add_train_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("infer", help="super-resolve LR images")
    p.add_argument("--checkpoint", action="append", help="checkpoint file (repeatable)")
    p.add_argument("--combination", help="combination file (one checkpoint path per line)")
    p.add_argument("--spec", help="assert this architecture for every checkpoint")
    p.add_argument("--manifest", help="manifest whose LR images are processed")
    p.add_argument("--lr", nargs="*", help="explicit LR image files")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("combine", help="greedy ensemble search over checkpoints")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--checkpoints", nargs="*", help="checkpoint files")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir",
                   help="directory scanned for *.tsr checkpoints")
    p.add_argument("--manifest", help="evaluation manifest (tsv)")
    p.add_argument("--scorer", choices=["psnr", "external"])
    p.add_argument("--ocr-cmd", dest="ocr_cmd",
                   help="external OCR command with an {image} placeholder")
    p.add_argument("--rounds", type=int, help="search rounds (default 14)")
    p.add_argument("--border-mode", dest="border_mode", choices=list(metrics.BORDER_MODES))
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("evaluate", help="metric report for super-resolved outputs")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--sr-dir", dest="sr_dir", help="directory with <id>_sr.pgm outputs")
    p.add_argument("--manifest", help="manifest with HR references")
    p.add_argument("--border-mode", dest="border_mode", choices=list(metrics.BORDER_MODES))
    p.add_argument("--baseline", action="store_true",
                   help="also report the bicubic x2 baseline")
    p.add_argument("--ocr-cmd", dest="ocr_cmd",
                   help="external OCR command with an {image} placeholder")
    p.add_argument("--report", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SpecParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, PgmError, CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
