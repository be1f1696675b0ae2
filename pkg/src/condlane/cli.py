"""Command-line entry points: gen-data, train, eval, infer.

Every command that owns an output directory leaves a manifest.json behind so
the run is self-describing: config snapshot, seed, produced artifacts and
(for training) the full loss history. Logs are line-delimited JSON records.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .config import (
    RunConfig,
    load_run_config,
    run_config_from_record,
    run_config_record,
)
from .errors import AnnotationFormatError, ConfigError
from .formats import record_from_polylines
from .geometry import ImageSpec
from .metrics import MatchConfig, match_and_score, tusimple_score
from .model import LaneDetector
from .pipeline import fit, infer
from .synth import Sample, generate_dataset, load_dataset, save_dataset
from .viz import draw_detections, load_image, save_image

MANIFEST_VERSION = 1


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _ensure_empty(out: Path, force: bool) -> Optional[str]:
    if out.exists() and any(out.iterdir()) and not force:
        return f"output directory {out} is not empty (pass --force to overwrite)"
    return None


def _write_manifest(out: Path, payload: dict) -> None:
    payload = {"manifest_version": MANIFEST_VERSION, **payload}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_from_checkpoint(path) -> tuple:
    """Rebuild the detector a checkpoint was trained with; returns (model, cfg)."""
    manifest = read_manifest(path)
    record = manifest.get("config") or {}
    if "model" not in record:
        raise ConfigError(
            f"checkpoint {path} has no embedded config; cannot rebuild the model"
        )
    cfg = run_config_from_record(record)
    model = LaneDetector(cfg.model)
    load_checkpoint(path, model)
    return model, cfg


def _dataset_canvas(data_dir: Path) -> ImageSpec:
    with open(data_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    rec = manifest["config"]
    return ImageSpec(height=int(rec["height"]), width=int(rec["width"]))


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    refusal = _ensure_empty(out, args.force)
    if refusal:
        return _fail(refusal)
    count = cfg.dataset_size if args.count is None else args.count
    if count < 0:
        return _fail("--count must be >= 0")
    out.mkdir(parents=True, exist_ok=True)
    manifest = save_dataset(out, cfg.scene, count)
    histogram = Counter(e["category"] for e in manifest["samples"])
    print(f"wrote {count} scenes to {out}")
    for category in sorted(histogram):
        print(f"  {category}: {histogram[category]}")
    return 0


def _load_or_generate(cfg: RunConfig, config_dir: Path) -> List[Sample]:
    if cfg.data_dir is not None:
        data_dir = Path(cfg.data_dir)
        if not data_dir.is_absolute():
            data_dir = config_dir / data_dir
        canvas = _dataset_canvas(data_dir)
        if canvas != cfg.model.canvas:
            raise ConfigError(
                f"dataset canvas {canvas.height}x{canvas.width} does not match "
                f"model canvas {cfg.model.canvas.height}x{cfg.model.canvas.width}"
            )
        return load_dataset(data_dir)
    return generate_dataset(cfg.scene, cfg.dataset_size)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    if args.resume is None:
        refusal = _ensure_empty(out, args.force)
        if refusal:
            return _fail(refusal)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)

    samples = _load_or_generate(cfg, Path(args.config).resolve().parent)
    record = run_config_record(cfg)

    torch.manual_seed(cfg.train.seed)
    model = LaneDetector(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.train.lr)
    start_step = 0
    if args.resume is not None:
        start_step, ckpt_config = load_checkpoint(args.resume, model, optimizer)
        if ckpt_config.get("model") not in (None, record["model"]):
            return _fail(
                f"checkpoint {args.resume} was trained with a different model "
                "config; refusing to resume"
            )

    checkpoints = []

    def save(name: str, step: int) -> None:
        path = save_checkpoint(out / "checkpoints" / name, model, optimizer,
                               step=step, config=record)
        checkpoints.append(str(path.relative_to(out)))

    save("init", start_step)

    log_path = out / "loss_log.jsonl"
    mode = "a" if args.resume is not None else "w"
    history = []
    with open(log_path, mode, encoding="utf-8") as fh:
        def log(rec: dict) -> None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        def epoch_end(epoch: int, step: int) -> None:
            every = cfg.train.checkpoint_every
            if every > 0 and (epoch + 1) % every == 0:
                save(f"epoch_{epoch + 1:04d}", step)

        history = fit(model, samples, cfg.train, log=log, epoch_end=epoch_end,
                      start_step=start_step, optimizer=optimizer)

    if cfg.train.epochs > 0:
        save("final", start_step + len(history))

    _write_manifest(out, {
        "command": "train",
        "config": record,
        "seed": cfg.train.seed,
        "resumed_from": args.resume,
        "dataset": cfg.data_dir or f"generated:{cfg.dataset_size}",
        "checkpoints": checkpoints,
        "loss_log": log_path.name,
        "history": history,
    })
    last = history[-1]["total"] if history else float("nan")
    print(f"trained {len(history)} steps; final total {last:.4f}; run dir {out}")
    return 0


def _report_record(report) -> dict:
    rec = {
        "tp": report.tp, "fp": report.fp, "fn": report.fn,
        "precision": report.precision, "recall": report.recall, "f1": report.f1,
    }
    if report.by_category:
        rec["by_category"] = {
            name: _report_record(sub) for name, sub in report.by_category.items()
        }
    return rec


def _row_accuracy(preds, gts, canvas: ImageSpec):
    """Fixed-row accuracy over the whole set, sampled every 8 image rows."""
    ys = np.arange(4.0, canvas.height, 8.0)
    tol = 20.0 * canvas.width / 1280.0
    pred_xs = [record_from_polylines(lanes, ys).lane_xs() for lanes in preds]
    gt_xs = [record_from_polylines(lanes, ys).lane_xs() for lanes in gts]
    return tusimple_score(pred_xs, gt_xs, pixel_tol=tol), tol


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    refusal = _ensure_empty(out, args.force)
    if refusal:
        return _fail(refusal)
    samples = load_dataset(data_dir)
    canvas = _dataset_canvas(data_dir)

    if args.oracle:
        preds = [list(s.lanes) for s in samples]
        checkpoint = None
    else:
        if args.checkpoint is None:
            return _fail("--checkpoint is required unless --oracle is given")
        model, cfg = _model_from_checkpoint(args.checkpoint)
        if cfg.model.canvas != canvas:
            return _fail(
                f"checkpoint expects a {cfg.model.canvas.height}x"
                f"{cfg.model.canvas.width} canvas but dataset {data_dir} is "
                f"{canvas.height}x{canvas.width}; refusing to evaluate"
            )
        preds = [
            [lane for lane, _ in infer(model, s.image, threshold=args.threshold)]
            for s in samples
        ]
        checkpoint = str(args.checkpoint)

    gts = [list(s.lanes) for s in samples]
    match_cfg = MatchConfig.for_image(canvas, iou_threshold=args.iou)
    report = match_and_score(preds, gts, match_cfg,
                             categories=[s.category for s in samples])
    row_report, tol = _row_accuracy(preds, gts, canvas)

    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, {
        "command": "eval",
        "checkpoint": checkpoint,
        "data": str(data_dir),
        "oracle": bool(args.oracle),
        "iou_threshold": args.iou,
        "report": _report_record(report),
        "row_accuracy": {
            "accuracy": row_report.accuracy,
            "fp_rate": row_report.fp_rate,
            "fn_rate": row_report.fn_rate,
            "f1": row_report.f1,
            "pixel_tol": tol,
        },
    })
    print(f"F1 {report.f1:.4f}  precision {report.precision:.4f}  "
          f"recall {report.recall:.4f}  (tp {report.tp} fp {report.fp} fn {report.fn})")
    for name in sorted(report.by_category):
        sub = report.by_category[name]
        print(f"  {name}: F1 {sub.f1:.4f} (tp {sub.tp} fp {sub.fp} fn {sub.fn})")
    print(f"row accuracy {row_report.accuracy:.4f} at tol {tol:.1f} px")
    return 0


def cmd_infer(args) -> int:
    model, cfg = _model_from_checkpoint(args.checkpoint)
    canvas = cfg.model.canvas
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    succeeded = 0
    for name in args.images:
        path = Path(name)
        image = load_image(path)
        if image is None:
            _warn(f"skipping {path}: unreadable image")
            continue
        h, w = image.shape[1:]
        if (h, w) != (canvas.height, canvas.width):
            _warn(f"skipping {path}: size {h}x{w} does not match model canvas "
                  f"{canvas.height}x{canvas.width}")
            continue
        detections = infer(model, image, threshold=args.threshold)
        overlay = draw_detections(image, detections)
        out_path = out / path.name
        save_image(out_path, overlay)
        entries.append({
            "input": str(path),
            "output": out_path.name,
            "lanes": len(detections),
            "scores": [round(score, 6) for _, score in detections],
        })
        succeeded += 1
        print(f"{path.name}: {len(detections)} lanes")

    _write_manifest(out, {
        "command": "infer",
        "checkpoint": str(args.checkpoint),
        "threshold": args.threshold,
        "images": entries,
    })
    if succeeded == 0:
        return _fail("no input image could be processed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condlane",
        description="Lane detection with conditional shape heads: synthetic "
                    "data generation, training, evaluation and visualization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset to disk")
    g.add_argument("--config", required=True, help="run config YAML")
    g.add_argument("--out", required=True, help="dataset output directory")
    g.add_argument("--count", type=int, default=None,
                   help="override data.count from the config")
    g.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector from a run config")
    t.add_argument("--config", required=True, help="run config YAML")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--resume", default=None,
                   help="checkpoint to continue from (same model config)")
    t.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--checkpoint", default=None, help="checkpoint npz/json stem")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="report output directory")
    e.add_argument("--iou", type=float, default=0.5, help="IoU match threshold")
    e.add_argument("--threshold", type=float, default=None,
                   help="proposal score threshold (default: model config)")
    e.add_argument("--oracle", action="store_true",
                   help="score the dataset labels against themselves")
    e.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="write detection overlays for images")
    i.add_argument("--checkpoint", required=True, help="checkpoint npz/json stem")
    i.add_argument("--out", required=True, help="overlay output directory")
    i.add_argument("--threshold", type=float, default=None,
                   help="proposal score threshold (default: model config)")
    i.add_argument("images", nargs="+", help="input image files")
    i.set_defaults(func=cmd_infer)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AnnotationFormatError) as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"{exc.filename or exc}: not found")


if __name__ == "__main__":
    sys.exit(main())
