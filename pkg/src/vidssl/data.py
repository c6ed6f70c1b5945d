"""Clip storage, synthetic group-activity video generation, and frame sampling.

A dataset is a directory tree of per-clip frame folders (zero-padded PNGs)
plus a JSON-lines manifest.  The synthetic generator renders small clips of
moving discs whose joint motion pattern encodes the class label, so a model
has to use temporal structure to solve the downstream probe task.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_NAME = "frame_{:06d}.png"

# Motion patterns available to the synthetic generator, in label-id order.
SYNTHETIC_PATTERNS = ("converge", "disperse", "follow_leader", "counter_rotate")


class ValidationError(ValueError):
    """A manifest, record, or argument violated a dataset invariant."""


@dataclass(frozen=True)
class ClipRecord:
    """One video clip stored as a directory of frames.

    Attributes:
        clip_id: unique identifier within the manifest.
        frame_dir: directory containing ``frame_000000.png`` .. ``frame_{n-1}.png``.
        num_frames: number of frames on disk.
        fps: nominal frame rate of the clip.
        labels: ground-truth label ids (singleton for single-label datasets).
        boxes: optional per-frame actor boxes, frame index -> list of
            (x, y, w, h) in pixels.
    """

    clip_id: str
    frame_dir: Path
    num_frames: int
    fps: float
    labels: frozenset[int]
    boxes: dict[int, list[tuple[float, float, float, float]]] | None = None

    def frame_path(self, index: int) -> Path:
        return self.frame_dir / FRAME_NAME.format(index)


@dataclass
class Manifest:
    """An ordered collection of clips with shared label vocabulary."""

    dataset_name: str
    label_names: list[str]
    multi_label: bool
    records: list[ClipRecord]
    merge_map: dict[int, int] | None = None

    @property
    def num_classes(self) -> int:
        return len(self.label_names)


@dataclass(frozen=True)
class SyntheticSpec:
    """Configuration for the synthetic moving-disc dataset generator."""

    clips_per_split: dict[str, int] = field(
        default_factory=lambda: {"train": 16, "test": 8}
    )
    num_classes: int = 4
    frames_per_clip: int = 16
    frame_size: int = 64
    actors_per_clip: tuple[int, int] = (2, 6)
    rng_seed: int = 0

    def validate(self) -> None:
        if not self.clips_per_split or any(n < 1 for n in self.clips_per_split.values()):
            raise ValidationError("clips_per_split must map split names to counts >= 1")
        if not 1 <= self.num_classes <= len(SYNTHETIC_PATTERNS):
            raise ValidationError(
                f"num_classes must be in [1, {len(SYNTHETIC_PATTERNS)}], got {self.num_classes}"
            )
        if self.frames_per_clip < 1 or self.frame_size < 1:
            raise ValidationError("frames_per_clip and frame_size must be >= 1")
        if self.frame_size % 8 != 0:
            raise ValidationError(
                f"frame_size must be divisible by 8 (smallest supported patch), got {self.frame_size}"
            )
        lo, hi = self.actors_per_clip
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad actors_per_clip range {self.actors_per_clip}")


def segment_sample(num_frames: int, k: int, mode: str, rng: np.random.Generator | None = None) -> list[int]:
    """Pick ``k`` frame indices by splitting the clip into ``k`` equal segments.

    ``mode="train"`` draws one uniform index per segment, ``mode="eval"`` takes
    each segment's center.  When ``num_frames < k`` the rounded segment centers
    repeat frames so that exactly ``k`` indices are always produced and every
    frame is covered.  Output is non-decreasing.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if num_frames < 1:
        raise ValidationError(f"num_frames must be >= 1, got {num_frames}")
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValidationError("train mode requires an rng")

    indices = []
    for i in range(k):
        lo = (i * num_frames) // k
        hi = ((i + 1) * num_frames) // k
        if mode == "eval" or hi <= lo:
            # Segment center; also the fallback when segments are sub-frame wide.
            indices.append(int((2 * i + 1) * num_frames // (2 * k)))
        else:
            indices.append(int(rng.integers(lo, hi)))
    return indices


def load_clip(record: ClipRecord, indices: list[int]) -> np.ndarray:
    """Decode the given frames as a float array of shape (len(indices), H, W, 3) in [0, 1]."""
    for idx in indices:
        if not 0 <= idx < record.num_frames:
            raise ValidationError(
                f"frame index {idx} out of range [0, {record.num_frames}) for clip {record.clip_id}"
            )
    frames = []
    for idx in indices:
        path = record.frame_path(idx)
        try:
            with Image.open(path) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
        except (OSError, SyntaxError) as exc:
            raise ValidationError(f"failed to decode frame {path}: {exc}") from exc
    return np.stack(frames, axis=0)


# ---------------------------------------------------------------------------
# Manifest I/O (JSON-lines: one header line, then one record per line).
# ---------------------------------------------------------------------------


def save_manifest(manifest: Manifest, path: Path) -> None:
    """Write a manifest as JSON-lines with frame dirs relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent.resolve()
    header = {
        "dataset_name": manifest.dataset_name,
        "label_names": manifest.label_names,
        "multi_label": manifest.multi_label,
        "merge_map": (
            {str(k): v for k, v in manifest.merge_map.items()}
            if manifest.merge_map is not None
            else None
        ),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for rec in manifest.records:
        frame_dir = Path(rec.frame_dir).resolve()
        rel = frame_dir.relative_to(base) if frame_dir.is_relative_to(base) else frame_dir
        entry = {
            "clip_id": rec.clip_id,
            "frame_dir": str(rel),
            "num_frames": rec.num_frames,
            "fps": rec.fps,
            "labels": sorted(rec.labels),
            "boxes": (
                {str(k): [list(b) for b in v] for k, v in rec.boxes.items()}
                if rec.boxes is not None
                else None
            ),
        }
        lines.append(json.dumps(entry, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _frame_size_of(record: ClipRecord) -> tuple[int, int]:
    """(width, height) of the clip's first frame."""
    with Image.open(record.frame_path(0)) as img:
        return img.size


def _validate_record(rec: ClipRecord, num_labels: int) -> None:
    if not rec.labels:
        raise ValidationError(f"clip {rec.clip_id}: labels must be non-empty")
    for lab in rec.labels:
        if not 0 <= lab < num_labels:
            raise ValidationError(
                f"clip {rec.clip_id}: label id {lab} out of range for {num_labels} labels"
            )
    if not rec.frame_dir.is_dir():
        raise ValidationError(f"clip {rec.clip_id}: frame dir {rec.frame_dir} missing")
    n_on_disk = len(list(rec.frame_dir.glob("frame_*.png")))
    if n_on_disk != rec.num_frames:
        raise ValidationError(
            f"clip {rec.clip_id}: manifest says {rec.num_frames} frames, found {n_on_disk}"
        )
    for idx in (0, rec.num_frames - 1):
        if not rec.frame_path(idx).is_file():
            raise ValidationError(f"clip {rec.clip_id}: missing frame file {rec.frame_path(idx)}")
    if rec.boxes is not None:
        width, height = _frame_size_of(rec)
        for frame_idx, boxes in rec.boxes.items():
            if not 0 <= frame_idx < rec.num_frames:
                raise ValidationError(
                    f"clip {rec.clip_id}: boxes reference frame {frame_idx} out of range"
                )
            for box in boxes:
                x, y, w, h = box
                if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
                    raise ValidationError(
                        f"clip {rec.clip_id}: box {box} outside {width}x{height} frame"
                    )


def load_manifest(path: Path) -> Manifest:
    """Parse and eagerly validate a JSON-lines manifest."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest {path} does not exist")
    base = path.parent.resolve()
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"manifest {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path}: bad header line: {exc}") from exc

    label_names = list(header["label_names"])
    merge_map = None
    if header.get("merge_map") is not None:
        merge_map = {int(k): int(v) for k, v in header["merge_map"].items()}
        missing = set(range(len(label_names))) - set(merge_map)
        if missing:
            raise ValidationError(f"merge_map missing label ids {sorted(missing)}")

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"manifest {path}:{lineno}: bad record: {exc}") from exc
        boxes = None
        if entry.get("boxes") is not None:
            boxes = {
                int(k): [tuple(float(c) for c in b) for b in v]
                for k, v in entry["boxes"].items()
            }
        rec = ClipRecord(
            clip_id=str(entry["clip_id"]),
            frame_dir=(base / entry["frame_dir"]).resolve(),
            num_frames=int(entry["num_frames"]),
            fps=float(entry["fps"]),
            labels=frozenset(int(l) for l in entry["labels"]),
            boxes=boxes,
        )
        _validate_record(rec, len(label_names))
        records.append(rec)

    return Manifest(
        dataset_name=str(header["dataset_name"]),
        label_names=label_names,
        multi_label=bool(header["multi_label"]),
        records=records,
        merge_map=merge_map,
    )


# ---------------------------------------------------------------------------
# Synthetic moving-disc generator.
# ---------------------------------------------------------------------------


def _actor_trajectories(
    pattern: str, n_actors: int, n_frames: int, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-frame actor centers of shape (n_frames, n_actors, 2) in pixel coords.

    The class is encoded purely in the joint motion pattern; starting
    positions, speeds, and phases are randomized per clip.
    """
    t = np.linspace(0.0, 1.0, n_frames)[:, None]  # (T, 1)
    margin = 0.14 * size
    lo, hi = margin, size - margin

    if pattern == "converge":
        target = rng.uniform(0.4 * size, 0.6 * size, size=2)
        start = rng.uniform(lo, hi, size=(n_actors, 2))
        # Keep starts away from the target so the contraction is visible.
        far = start - target
        norms = np.linalg.norm(far, axis=1, keepdims=True)
        start = target + far / np.maximum(norms, 1e-6) * np.maximum(norms, 0.3 * size)
        frac = rng.uniform(0.75, 0.92)  # fraction of the gap closed by the last frame
        pos = start[None] + (target[None, None] - start[None]) * (t[:, :, None] * frac)
    elif pattern == "disperse":
        origin = rng.uniform(0.4 * size, 0.6 * size, size=2)
        angles = rng.uniform(0, 2 * np.pi, size=n_actors) + np.arange(n_actors) * (
            2 * np.pi / n_actors
        )
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        start = origin + dirs * rng.uniform(0.02, 0.07, size=(n_actors, 1)) * size
        dist = rng.uniform(0.28, 0.40, size=(n_actors, 1)) * size
        pos = start[None] + dirs[None] * dist[None] * t[:, :, None]
    elif pattern == "follow_leader":
        # Leader walks a smooth random arc; follower k trails by k * delay.
        omega = rng.uniform(1.5, 3.0) * rng.choice([-1.0, 1.0])
        phase = rng.uniform(0, 2 * np.pi)
        center = rng.uniform(0.42 * size, 0.58 * size, size=2)
        radius = rng.uniform(0.22, 0.33) * size
        delay = rng.uniform(0.35, 0.55) / max(n_actors - 1, 1)
        offsets = np.arange(n_actors) * delay
        tt = t - offsets[None]  # (T, A)
        pos = np.stack(
            [
                center[0] + radius * np.cos(omega * tt + phase),
                center[1] + radius * np.sin(omega * tt + phase),
            ],
            axis=2,
        )
    elif pattern == "counter_rotate":
        center = rng.uniform(0.42 * size, 0.58 * size, size=2)
        radius = rng.uniform(0.2, 0.34, size=n_actors) * size
        signs = np.where(np.arange(n_actors) % 2 == 0, 1.0, -1.0)
        omega = rng.uniform(3.5, 5.5) * signs
        phase = rng.uniform(0, 2 * np.pi, size=n_actors)
        ang = omega[None] * t + phase[None]
        pos = np.stack(
            [center[0] + radius[None] * np.cos(ang), center[1] + radius[None] * np.sin(ang)],
            axis=2,
        )
    else:
        raise ValidationError(f"unknown synthetic pattern {pattern!r}")

    return np.clip(pos, margin * 0.5, size - margin * 0.5)


def _render_frame(
    size: int,
    centers: np.ndarray,
    radii: np.ndarray,
    colors: np.ndarray,
    background: np.ndarray,
) -> np.ndarray:
    """Rasterize discs over a static background; returns uint8 (H, W, 3)."""
    canvas = background.copy()
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    for (cx, cy), r, color in zip(centers, radii, colors):
        dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
        # Soft 1px edge so discs are not aliased to invisibility at small radii.
        alpha = np.clip((r + 0.5) - np.sqrt(dist2), 0.0, 1.0)[:, :, None]
        canvas = canvas * (1 - alpha) + color[None, None, :] * alpha
    return np.clip(canvas * 255.0, 0, 255).astype(np.uint8)


def _disc_box(
    center: np.ndarray, radius: float, size: int
) -> tuple[float, float, float, float]:
    x0 = max(center[0] - radius, 0.0)
    y0 = max(center[1] - radius, 0.0)
    x1 = min(center[0] + radius, float(size))
    y1 = min(center[1] + radius, float(size))
    return (x0, y0, max(x1 - x0, 1.0), max(y1 - y0, 1.0))


def generate_synthetic(spec: SyntheticSpec, out_dir: Path) -> dict[str, Manifest]:
    """Render the synthetic dataset and write one manifest per split.

    Layout: ``out_dir/<split>/manifest.jsonl`` and
    ``out_dir/<split>/clips/<clip_id>/frame_*.png``.  Fully deterministic for a
    fixed spec, including frame bytes.
    """
    spec.validate()
    out_dir = Path(out_dir)
    label_names = list(SYNTHETIC_PATTERNS[: spec.num_classes])
    manifests: dict[str, Manifest] = {}

    for split, n_clips in sorted(spec.clips_per_split.items()):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for clip_idx in range(n_clips):
            # Independent stream per clip: stable under reordering of splits.
            rng = np.random.default_rng([spec.rng_seed, zlib.crc32(split.encode()), clip_idx])
            label = clip_idx % spec.num_classes
            pattern = label_names[label]
            n_actors = int(rng.integers(spec.actors_per_clip[0], spec.actors_per_clip[1] + 1))

            pos = _actor_trajectories(pattern, n_actors, spec.frames_per_clip, spec.frame_size, rng)
            radii = rng.uniform(0.055, 0.1, size=n_actors) * spec.frame_size
            colors = rng.uniform(0.45, 1.0, size=(n_actors, 3)).astype(np.float32)
            background = np.full((spec.frame_size, spec.frame_size, 3), 0.08, dtype=np.float32)
            background += rng.uniform(0.0, 0.05) * np.linspace(0, 1, spec.frame_size)[None, :, None]

            clip_id = f"{split}_{clip_idx:05d}"
            clip_dir = split_dir / "clips" / clip_id
            clip_dir.mkdir(parents=True, exist_ok=True)
            boxes: dict[int, list[tuple[float, float, float, float]]] = {}
            for f in range(spec.frames_per_clip):
                frame = _render_frame(spec.frame_size, pos[f], radii, colors, background)
                try:
                    Image.fromarray(frame).save(clip_dir / FRAME_NAME.format(f))
                except OSError as exc:
                    raise OSError(f"failed writing {clip_dir / FRAME_NAME.format(f)}: {exc}") from exc
                boxes[f] = [
                    _disc_box(pos[f, a], radii[a], spec.frame_size) for a in range(n_actors)
                ]
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    frame_dir=clip_dir.resolve(),
                    num_frames=spec.frames_per_clip,
                    fps=8.0,
                    labels=frozenset([label]),
                    boxes=boxes,
                )
            )
        manifest = Manifest(
            dataset_name=f"synthetic-{split}",
            label_names=label_names,
            multi_label=False,
            records=records,
        )
        save_manifest(manifest, split_dir / "manifest.jsonl")
        manifests[split] = manifest
    return manifests
