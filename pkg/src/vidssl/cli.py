"""Command-line entry points.

Subcommands: ``synth`` (render the synthetic dataset), ``pretrain`` (run the
self-supervised loop, or dump its schedules as CSV), ``probe`` (fit and apply
the linear classifier on frozen features), ``eval`` (score a prediction dump
against a manifest), and ``viz`` (write view strips or attention overlays).
Every command stamps a provenance record (config hash, seed, version) next to
its outputs.  Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import BackboneConfig
from .configio import ConfigError, config_hash, from_dict, to_jsonable
from .data import (
    Manifest,
    SyntheticSpec,
    ValidationError,
    generate_synthetic,
    load_clip,
    load_manifest,
)
from .distill import DistillConfig
from .metrics import MetricError, evaluate_multi_label, evaluate_single_label
from .probe import LinearClassifier, ProbeConfig, extract_features, fit_linear_probe
from .schedule import ScheduleConfig, dump_rows
from .trainer import CheckpointError, PretrainConfig, TrainingError, load_checkpoint, pretrain
from .views import AugmentPolicy, ViewConfig, eval_view, sample_views
from .viz import extract_attention, render_overlay, top_k_locations


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 with usage instead of argparse's exit 2
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _write_provenance(out_dir: Path, command: str, cfg_hash: str, seed: int | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "version": f"vidssl-{__version__}",
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out_dir / "provenance.json").write_text(json.dumps(record, indent=2), encoding="utf-8")


def _network_of(bundle, which: str):
    if which == "student":
        return bundle.state.student.backbone
    return bundle.state.teacher.backbone


def _view_config_of(bundle) -> ViewConfig:
    stored = bundle.sidecar.get("pretrain_config")
    if stored is None or "views" not in stored:
        raise ConfigError("checkpoint sidecar does not record the view configuration")
    return from_dict(ViewConfig, stored["views"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        clips_per_split={"train": args.num_train, "test": args.num_test},
        num_classes=args.classes,
        frames_per_clip=args.frames,
        frame_size=args.size,
        actors_per_clip=(args.actors_min, args.actors_max),
        rng_seed=args.seed,
    )
    out_dir = Path(args.out)
    manifests = generate_synthetic(spec, out_dir)
    _write_provenance(out_dir, "synth", config_hash(spec), args.seed)
    for split, manifest in manifests.items():
        print(f"{split}: {len(manifest.records)} clips -> {out_dir / split / 'manifest.jsonl'}")
    return 0


def _load_pretrain_config(config_path: Path, manifest: Manifest) -> PretrainConfig:
    raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError("pretrain config must be a JSON object")
    schedule = raw.get("schedule")
    if isinstance(schedule, dict) and "steps_per_epoch" not in schedule:
        import math

        batch = raw.get("batch_size", 8)
        schedule["steps_per_epoch"] = math.ceil(len(manifest.records) / batch)
    return from_dict(PretrainConfig, raw)


def _cmd_pretrain(args) -> int:
    manifest = load_manifest(Path(args.data))
    cfg = _load_pretrain_config(Path(args.config), manifest)
    out_dir = Path(args.out)
    _write_provenance(out_dir, "pretrain", config_hash(cfg), cfg.seed)
    if args.dump_schedules:
        rows = dump_rows(cfg.schedule)
        with open(args.dump_schedules, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", "wd", "ema_momentum"])
            writer.writerows(rows)
        print(f"wrote {len(rows)} schedule rows to {args.dump_schedules}")
        return 0
    resume = Path(args.resume) if args.resume else None
    state, logs = pretrain(manifest, cfg, out_dir=out_dir, resume_from=resume)
    if logs:
        print(
            f"finished at step {state.step}: total={logs[-1].total:.4f} "
            f"(tcl={logs[-1].tcl:.4f}, scl={logs[-1].scl:.4f})"
        )
    print(f"checkpoint: {out_dir / 'checkpoint_final.pt'}")
    return 0


def _cmd_probe(args) -> int:
    bundle = load_checkpoint(Path(args.checkpoint))
    encoder = _network_of(bundle, args.network)
    view_cfg = _view_config_of(bundle)
    train_manifest = load_manifest(Path(args.manifest))
    eval_manifest = load_manifest(Path(args.eval_manifest)) if args.eval_manifest else train_manifest

    cfg = ProbeConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    out_dir = Path(args.out)
    _write_provenance(out_dir, "probe", config_hash(cfg), cfg.seed)

    from .probe import _label_matrix

    features = extract_features(train_manifest, encoder, view_cfg)
    labels = _label_matrix(train_manifest)
    classifier = fit_linear_probe(
        features, labels, train_manifest.num_classes, cfg, multi_label=train_manifest.multi_label
    )
    np.savez(
        out_dir / "classifier.npz",
        weight=classifier.weight,
        bias=classifier.bias,
        multi_label=np.array(classifier.multi_label),
        threshold=np.array(classifier.threshold),
    )

    eval_features = extract_features(eval_manifest, encoder, view_cfg)
    scores = classifier.scores(eval_features)
    predictions = classifier.predict(eval_features)
    dump = {
        "dataset_name": eval_manifest.dataset_name,
        "multi_label": eval_manifest.multi_label,
        "schema_version": 1,
        "predictions": {
            rec.clip_id: {
                "labels": sorted(pred) if eval_manifest.multi_label else [pred],
                "scores": [float(s) for s in score_row],
            }
            for rec, pred, score_row in zip(eval_manifest.records, predictions, scores)
        },
    }
    (out_dir / "predictions.json").write_text(json.dumps(dump, indent=2), encoding="utf-8")
    print(f"wrote classifier and {len(predictions)} predictions to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    dump = json.loads(Path(args.pred).read_text(encoding="utf-8"))
    preds_by_clip = dump.get("predictions", {})
    missing = [rec.clip_id for rec in manifest.records if rec.clip_id not in preds_by_clip]
    if missing:
        raise ValidationError(
            f"prediction dump is missing {len(missing)} clips from the manifest "
            f"(first: {missing[:3]})"
        )

    if manifest.multi_label:
        pred_sets = [set(preds_by_clip[r.clip_id]["labels"]) for r in manifest.records]
        gt_sets = [set(r.labels) for r in manifest.records]
        report = evaluate_multi_label(pred_sets, gt_sets)
    else:
        preds = [preds_by_clip[r.clip_id]["labels"][0] for r in manifest.records]
        gts = [next(iter(r.labels)) for r in manifest.records]
        report = evaluate_single_label(preds, gts, manifest.num_classes, manifest.merge_map)

    print(f"samples: {report.sample_count}")
    if report.mca is not None:
        print(f"MCA:        {report.mca:.4f}")
        print(f"MPCA:       {report.mpca:.4f}")
        if report.merged_mca is not None:
            print(f"Merged MCA: {report.merged_mca:.4f}")
        for cls_id, acc in sorted(report.per_class_accuracy.items()):
            print(f"  class {cls_id} ({manifest.label_names[cls_id]}): {acc:.4f}")
    if report.p_g is not None:
        print(f"P_g: {report.p_g:.4f}  R_g: {report.r_g:.4f}  F_g: {report.f_g:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        print(f"report -> {args.out}")
    return 0


def _find_record(manifest: Manifest, clip_id: str):
    for rec in manifest.records:
        if rec.clip_id == clip_id:
            return rec
    raise ValidationError(f"clip {clip_id!r} not found in manifest")


def _cmd_viz_dump_views(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    record = _find_record(manifest, args.clip) if args.clip else manifest.records[0]
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    view_cfg = from_dict(ViewConfig, raw.get("views", raw))
    augment = from_dict(AugmentPolicy, raw.get("augment", {}))
    rng = np.random.default_rng(args.seed)
    batch = sample_views(record, view_cfg, augment, rng)
    out_dir = Path(args.out)
    _write_provenance(out_dir, "viz dump-views", config_hash(view_cfg), args.seed)
    from PIL import Image

    for group, views_ in (("global", batch.globals), ("local_temporal", batch.local_temporals), ("local_spatial", batch.local_spatials)):
        for i, view in enumerate(views_):
            strip = np.concatenate(list(view.frames), axis=1)
            img = Image.fromarray(np.clip(strip * 255, 0, 255).astype(np.uint8))
            img.save(out_dir / f"{record.clip_id}_{group}_{i:02d}.png")
    n = len(batch.globals) + len(batch.local_temporals) + len(batch.local_spatials)
    print(f"wrote {n} view strips to {out_dir}")
    return 0


def _cmd_viz_attention(args) -> int:
    bundle = load_checkpoint(Path(args.checkpoint))
    encoder = _network_of(bundle, args.network)
    view_cfg = _view_config_of(bundle)
    manifest = load_manifest(Path(args.manifest))
    record = _find_record(manifest, args.clip) if args.clip else manifest.records[0]
    view = eval_view(record, view_cfg)
    attn = extract_attention(encoder, view)
    locations = top_k_locations(attn, args.k)
    out_dir = Path(args.out)
    _write_provenance(out_dir, "viz attention", bundle.sidecar.get("config_hash") or "-", None)
    source = load_clip(record, view.frame_indices)
    for f, frame_idx in enumerate(view.frame_indices):
        frame_locs = [loc for loc in locations if loc.frame == f]
        render_overlay(source[f], frame_locs, out_dir / f"{record.clip_id}_f{frame_idx:04d}.png")
    (out_dir / f"{record.clip_id}_locations.json").write_text(
        json.dumps(
            [
                {"frame": l.frame, "head": l.head, "x": l.x, "y": l.y, "weight": l.weight, "radius": l.radius}
                for l in locations
            ],
            indent=2,
        ),
        encoding="utf-8",
    )
    print(f"wrote {len(view.frame_indices)} overlays to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidssl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vidssl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate the synthetic moving-disc dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-train", type=int, default=200)
    p.add_argument("--num-test", type=int, default=80)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--actors-min", type=int, default=2)
    p.add_argument("--actors-max", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="run self-supervised pretraining")
    p.add_argument("--config", required=True, help="JSON pretrain config")
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--dump-schedules", default=None, metavar="CSV", help="write (step,lr,wd,ema) rows and exit")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="fit and apply a linear probe on frozen features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="manifest used to fit the probe")
    p.add_argument("--eval-manifest", default=None, help="manifest to predict on (default: fit manifest)")
    p.add_argument("--out", required=True)
    p.add_argument("--network", choices=["teacher", "student"], default="teacher")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("eval", help="score a prediction dump against a manifest")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("viz", help="visualization commands")
    viz_sub = p.add_subparsers(dest="viz_command", required=True)

    q = viz_sub.add_parser("dump-views", help="write each view of one clip as a PNG strip")
    q.add_argument("--manifest", required=True)
    q.add_argument("--clip", default=None)
    q.add_argument("--config", required=True, help="JSON with view (and optional augment) config")
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=_cmd_viz_dump_views)

    q = viz_sub.add_parser("attention", help="render top-k attention-location overlays")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--manifest", required=True)
    q.add_argument("--clip", default=None)
    q.add_argument("--k", type=int, default=5)
    q.add_argument("--out", required=True)
    q.add_argument("--network", choices=["teacher", "student"], default="teacher")
    q.set_defaults(func=_cmd_viz_attention)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ConfigError, ValidationError, MetricError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, OSError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
