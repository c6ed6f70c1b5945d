"""Self-supervised pretraining loop.

Each step samples a batch of clips, builds their view sets, pushes global
views through the teacher (no gradient) and local views through the student,
and minimizes the combined distillation loss with Adam and decoupled,
scheduled weight decay.  The teacher then receives an EMA copy of the student
and the target center is refreshed; with ``kd_enabled=False`` the teacher
stays frozen at initialization (ablation mode).

All randomness is drawn from streams keyed by ``(seed, step)``, so a resumed
run replays the exact batch order and view draws of an unbroken run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig, ViewEncoder
from .configio import ConfigError, config_hash, from_dict, to_jsonable
from .data import Manifest
from .distill import (
    DistillConfig,
    DistillState,
    ema_update,
    entropy,
    scl_loss,
    sharpen,
    tcl_loss,
    total_loss,
    update_center,
)
from .schedule import ScheduleConfig, ema_momentum_at, lr_at, wd_at
from .views import AugmentPolicy, ViewConfig, sample_views

# Namespaced rng streams so independent draws never alias.
_STREAM_EPOCH = 11
_STREAM_STEP = 7


class TrainingError(RuntimeError):
    """The training loop hit a non-recoverable numeric or config problem."""


class CheckpointError(ValueError):
    """A checkpoint file is missing, malformed, or inconsistent with the config."""


@dataclass(frozen=True)
class PretrainConfig:
    views: ViewConfig
    backbone: BackboneConfig
    distill: DistillConfig
    schedule: ScheduleConfig
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    batch_size: int = 8
    seed: int = 0
    kd_enabled: bool = True
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only
    log_every: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        p = self.backbone.patch_size
        for name, (w, h) in (("global_size", self.views.global_size), ("local_size", self.views.local_size)):
            if w % p or h % p:
                raise ConfigError(f"views.{name}={w}x{h} not divisible by patch size {p}")


@dataclass
class TrainLogRecord:
    step: int
    lr: float
    wd: float
    ema_momentum: float
    tcl: float
    scl: float
    total: float
    teacher_entropy: float
    wall_time: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _clip_cache(manifest: Manifest) -> dict[str, np.ndarray]:
    """Decode every clip once; sampling then works from memory (uint8)."""
    from .data import load_clip

    cache = {}
    for rec in manifest.records:
        frames = load_clip(rec, list(range(rec.num_frames)))
        cache[rec.clip_id] = (frames * 255.0).astype(np.uint8)
    return cache


def _forward_student_groups(
    student: ViewEncoder, views_by_slot: list[list[np.ndarray]]
) -> list[torch.Tensor]:
    """Batch student views by frame count and return per-slot logits (B, n).

    ``views_by_slot[j][i]`` is the j-th view of clip i; different slots (and,
    for local spatial views, different clips within a slot) may have different
    frame counts, so views are grouped by shape before the forward pass.
    """
    n_slots = len(views_by_slot)
    n_clips = len(views_by_slot[0]) if n_slots else 0
    groups: dict[tuple[int, int, int], list[tuple[int, int, np.ndarray]]] = {}
    for j, slot in enumerate(views_by_slot):
        for i, frames in enumerate(slot):
            groups.setdefault(frames.shape[:3], []).append((i, j, frames))
    logits_by_pos: dict[tuple[int, int], torch.Tensor] = {}
    for members in groups.values():
        batch = torch.from_numpy(np.stack([m[2] for m in members]))
        logits = student(batch)
        for (i, j, _), row in zip(members, logits):
            logits_by_pos[(i, j)] = row
    return [
        torch.stack([logits_by_pos[(i, j)] for i in range(n_clips)]) for j in range(n_slots)
    ]


def pretrain(
    manifest: Manifest,
    cfg: PretrainConfig,
    out_dir: Path | None = None,
    resume_from: Path | None = None,
) -> tuple[DistillState, list[TrainLogRecord]]:
    """Run (or resume) the pretraining loop; returns final state and log."""
    if not manifest.records:
        raise ConfigError("manifest has no records")
    n_clips = len(manifest.records)
    batches_per_epoch = math.ceil(n_clips / cfg.batch_size)
    if cfg.schedule.steps_per_epoch != batches_per_epoch:
        raise ConfigError(
            f"schedule.steps_per_epoch={cfg.schedule.steps_per_epoch} but the manifest/batch "
            f"size imply {batches_per_epoch}"
        )
    cfg_hash = config_hash(cfg)
    total_steps = cfg.schedule.total_steps

    gen = torch.Generator().manual_seed(cfg.seed)
    student = ViewEncoder(cfg.backbone)
    student.init_weights(gen)
    state = DistillState(student, cfg.backbone.proj_output_dim)
    optimizer = torch.optim.AdamW(
        student.parameters(), lr=0.0, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0
    )

    if resume_from is not None:
        bundle = load_checkpoint(resume_from, expected_backbone=cfg.backbone)
        if bundle.sidecar.get("config_hash") not in (None, cfg_hash):
            raise CheckpointError(
                "checkpoint was produced by a different config "
                f"({bundle.sidecar.get('config_hash')} != {cfg_hash}); resume requires the same config"
            )
        state = bundle.state
        if bundle.optimizer_state is not None:
            optimizer = torch.optim.AdamW(
                state.student.parameters(), lr=0.0, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0
            )
            optimizer.load_state_dict(bundle.optimizer_state)

    cache = _clip_cache(manifest)
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "train_log.jsonl").open("a", encoding="utf-8")

    logs: list[TrainLogRecord] = []
    center_enabled = cfg.distill.centering
    try:
        for step in range(state.step, total_steps):
            t_start = time.time()
            epoch, pos = divmod(step, batches_per_epoch)
            perm = np.random.default_rng([cfg.seed, _STREAM_EPOCH, epoch]).permutation(n_clips)
            batch_ids = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, _STREAM_STEP, step])
            records = [manifest.records[i] for i in batch_ids]
            view_batches = [
                sample_views(
                    rec,
                    cfg.views,
                    cfg.augment,
                    rng,
                    source=cache[rec.clip_id].astype(np.float32) / 255.0,
                )
                for rec in records
            ]

            # Teacher targets from global views (no gradient).
            with torch.no_grad():
                teacher_logits = []
                for v in range(cfg.views.num_global):
                    batch = torch.from_numpy(
                        np.stack([vb.globals[v].frames for vb in view_batches])
                    )
                    teacher_logits.append(state.teacher(batch))
                center = state.center if center_enabled else None
                targets = [sharpen(z, cfg.distill.teacher_temp, center) for z in teacher_logits]

            # Student processes the global views too (matched against every
            # teacher global except its own copy) plus all local views.
            g_slots = [
                [vb.globals[j].frames for vb in view_batches]
                for j in range(cfg.views.num_global)
            ]
            lt_slots = [
                [vb.local_temporals[j].frames for vb in view_batches]
                for j in range(len(cfg.views.local_frame_choices))
            ]
            ls_slots = [
                [vb.local_spatials[j].frames for vb in view_batches]
                for j in range(cfg.views.num_local_spatial)
            ]
            temporal_logits = _forward_student_groups(state.student, g_slots + lt_slots)
            ls_logits = _forward_student_groups(state.student, ls_slots)
            student_temp = cfg.distill.student_temp
            temporal_dists = [sharpen(z, student_temp) for z in temporal_logits]
            ls_dists = [sharpen(z, student_temp) for z in ls_logits]
            same_view = frozenset((i, i) for i in range(cfg.views.num_global))

            tcl = tcl_loss(targets, temporal_dists, skip_pairs=same_view)
            scl = scl_loss(targets, ls_dists)
            loss = total_loss(tcl, scl)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at step {step} (config {cfg_hash}); "
                    f"batch clips: {[r.clip_id for r in records]}"
                )

            lr = lr_at(cfg.schedule, step)
            wd = wd_at(cfg.schedule, step)
            for group in optimizer.param_groups:
                group["lr"] = lr
                group["weight_decay"] = wd
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            assert all(p.grad is None for p in state.teacher.parameters()), (
                "optimizer state leaked into teacher parameters"
            )
            optimizer.step()

            momentum = ema_momentum_at(cfg.schedule, step)
            if cfg.kd_enabled:
                ema_update(state.teacher, state.student, momentum)
                if center_enabled:
                    state.center = update_center(
                        state.center, torch.cat(teacher_logits, dim=0), cfg.distill.center_momentum
                    )
            state.step = step + 1

            record = TrainLogRecord(
                step=step,
                lr=lr,
                wd=wd,
                ema_momentum=momentum,
                tcl=float(tcl.detach()),
                scl=float(scl.detach()),
                total=float(loss.detach()),
                teacher_entropy=float(entropy(torch.cat(targets, dim=0))),
                wall_time=time.time() - t_start,
            )
            logs.append(record)
            if log_file is not None and step % cfg.log_every == 0:
                log_file.write(json.dumps(record.to_dict()) + "\n")
                log_file.flush()
            if (
                out_dir is not None
                and cfg.checkpoint_every > 0
                and state.step % cfg.checkpoint_every == 0
            ):
                save_checkpoint(state, out_dir / f"checkpoint_{state.step:07d}.pt", optimizer, cfg)
        if out_dir is not None:
            save_checkpoint(state, out_dir / "checkpoint_final.pt", optimizer, cfg)
    finally:
        if log_file is not None:
            log_file.close()
    return state, logs


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


@dataclass
class CheckpointBundle:
    state: DistillState
    optimizer_state: dict | None
    sidecar: dict


def save_checkpoint(
    state: DistillState,
    path: Path,
    optimizer: torch.optim.Optimizer | None = None,
    config: PretrainConfig | None = None,
) -> None:
    """Serialize teacher, student, center, step, and optimizer moments.

    A JSON sidecar (``<path>.json``) records the backbone config, step count,
    rng scheme, and config hash for validation on load.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    backbone_cfg = _backbone_config_of(state)
    payload = {
        "student": state.student.state_dict(),
        "teacher": state.teacher.state_dict(),
        "center": state.center,
        "step": state.step,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)
    sidecar = {
        "backbone": to_jsonable(backbone_cfg),
        "step": state.step,
        "rng": {
            "seed": config.seed if config is not None else None,
            "scheme": "streams keyed by (seed, step); state is fully determined by the step count",
        },
        "config_hash": config_hash(config) if config is not None else None,
        "pretrain_config": to_jsonable(config) if config is not None else None,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
    )


def _backbone_config_of(state: DistillState) -> BackboneConfig:
    return state.student.backbone.config


def load_checkpoint(
    path: Path, expected_backbone: BackboneConfig | None = None
) -> CheckpointBundle:
    """Restore a checkpoint; validates shapes against the sidecar's config."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not path.is_file() or not sidecar_path.is_file():
        raise CheckpointError(f"checkpoint {path} or its sidecar is missing")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    backbone_cfg = from_dict(BackboneConfig, sidecar["backbone"])
    if expected_backbone is not None and backbone_cfg != expected_backbone:
        raise CheckpointError(
            f"checkpoint backbone config {backbone_cfg} does not match expected {expected_backbone}"
        )
    payload = torch.load(path, map_location="cpu", weights_only=False)
    student = ViewEncoder(backbone_cfg)
    try:
        student.load_state_dict(payload["student"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"student parameters do not match config: {exc}") from exc
    state = DistillState(student, backbone_cfg.proj_output_dim)
    try:
        state.teacher.load_state_dict(payload["teacher"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"teacher parameters do not match config: {exc}") from exc
    state.center = payload["center"]
    state.step = int(payload["step"])
    if state.step != int(sidecar["step"]):
        raise CheckpointError(
            f"sidecar step {sidecar['step']} disagrees with payload step {state.step}"
        )
    return CheckpointBundle(state=state, optimizer_state=payload.get("optimizer"), sidecar=sidecar)
