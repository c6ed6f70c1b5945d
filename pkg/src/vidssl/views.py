"""Global/local view construction and stochastic augmentation.

A training sample for one clip consists of: ``num_global`` global temporal
views (many frames, full spatial field), one local temporal view per
configured frame count (fewer frames, same spatial field), and ``q`` local
spatial views (few frames, small crop).  Color jittering and grayscale apply
to every view; Gaussian blur and solarization only ever touch global views.
All parameters of one view's augmentation are drawn once and shared by its
frames, so a view is temporally consistent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .data import ClipRecord, ValidationError, load_clip, segment_sample

GLOBAL_TEMPORAL = "global_temporal"
LOCAL_TEMPORAL = "local_temporal"
LOCAL_SPATIAL = "local_spatial"


@dataclass(frozen=True)
class ViewConfig:
    """Geometry of the view set built for each clip."""

    global_frames: int
    local_frame_choices: tuple[int, ...]
    global_size: tuple[int, int] = (224, 224)
    local_size: tuple[int, int] = (96, 96)
    num_global: int = 2
    num_local_spatial: int = 16
    crop_source: str = "random"
    local_crop_scale: tuple[float, float] = (0.08, 0.4)

    def __post_init__(self) -> None:
        if self.global_frames < 1:
            raise ValidationError("global_frames must be >= 1")
        if self.num_global < 1 or self.num_local_spatial < 1:
            raise ValidationError("need num_global >= 1 and num_local_spatial >= 1")
        if self.crop_source not in ("random", "gt_boxes"):
            raise ValidationError(f"unknown crop_source {self.crop_source!r}")
        if not self.local_frame_choices:
            raise ValidationError("local_frame_choices must be non-empty")
        clamped = []
        overshoot = [k for k in self.local_frame_choices if k > self.global_frames]
        if overshoot:
            warnings.warn(
                f"local frame counts {overshoot} exceed global_frames={self.global_frames}; clamping",
                stacklevel=2,
            )
        for k in self.local_frame_choices:
            k = min(k, self.global_frames)
            if k < 1:
                raise ValidationError("local frame counts must be >= 1")
            if k not in clamped:
                clamped.append(k)
        object.__setattr__(self, "local_frame_choices", tuple(clamped))

    @classmethod
    def volleyball(cls, **overrides) -> "ViewConfig":
        return cls(global_frames=5, local_frame_choices=(3, 5), **overrides)

    @classmethod
    def nba(cls, **overrides) -> "ViewConfig":
        return cls(global_frames=18, local_frame_choices=(2, 4, 8, 16, 18), **overrides)

    @classmethod
    def jrdb_par(cls, **overrides) -> "ViewConfig":
        return cls(global_frames=8, local_frame_choices=(2, 4, 8, 16, 18), **overrides)


@dataclass(frozen=True)
class AugmentPolicy:
    """Probabilities and strengths of the stochastic photometric transforms."""

    p_color_jitter: float = 0.8
    p_grayscale: float = 0.2
    p_blur_global: float = 0.1
    p_solarize_global: float = 0.2
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    solarize_threshold: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self) -> None:
        for p in (self.p_color_jitter, self.p_grayscale, self.p_blur_global, self.p_solarize_global):
            if not 0 <= p <= 1:
                raise ValidationError(f"probability {p} outside [0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(p_color_jitter=0.0, p_grayscale=0.0, p_blur_global=0.0, p_solarize_global=0.0)


@dataclass
class View:
    """One augmented view: frames (K, H, W, 3) in [0, 1] plus provenance."""

    frames: np.ndarray
    kind: str
    frame_indices: list[int]
    crop_rect: tuple[float, float, float, float]  # (x, y, w, h) in source pixels


@dataclass
class ViewBatch:
    globals: list[View]
    local_temporals: list[View]
    local_spatials: list[View]


# ---------------------------------------------------------------------------
# Cropping
# ---------------------------------------------------------------------------


def random_crop_rect(
    frame_size: tuple[int, int],
    scale: tuple[float, float],
    target_aspect: float,
    rng: np.random.Generator,
) -> tuple[float, float, float, float]:
    """Area-scaled random sub-rectangle at the target aspect ratio."""
    width, height = frame_size
    area = width * height * rng.uniform(scale[0], scale[1])
    w = min(float(np.sqrt(area * target_aspect)), float(width))
    h = min(float(np.sqrt(area / target_aspect)), float(height))
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return (x, y, w, h)


def bbox_guided_crop(
    frame_boxes: list[tuple[float, float, float, float]],
    frame_size: tuple[int, int],
    target_aspect: float,
    rng: np.random.Generator,
) -> tuple[float, float, float, float]:
    """Crop around a uniformly chosen actor box.

    The box is expanded about its center by a jittered margin (1.2x to 2.0x),
    grown to the target aspect ratio, then clamped to the frame.
    """
    if not frame_boxes:
        raise ValidationError("frame_boxes must be non-empty")
    width, height = frame_size
    bx, by, bw, bh = frame_boxes[int(rng.integers(len(frame_boxes)))]
    cx, cy = bx + bw / 2, by + bh / 2
    factor = rng.uniform(1.2, 2.0)
    w, h = bw * factor, bh * factor
    # Grow the short side so aspect = w/h without shrinking below the margin box.
    if w / h < target_aspect:
        w = h * target_aspect
    else:
        h = w / target_aspect
    w, h = min(w, float(width)), min(h, float(height))
    x = min(max(cx - w / 2, 0.0), width - w)
    y = min(max(cy - h / 2, 0.0), height - h)
    return (x, y, w, h)


def _extract(frames: np.ndarray, rect: tuple[float, float, float, float], out_size: tuple[int, int]) -> np.ndarray:
    """Crop (rounded to pixels) and bilinearly resize every frame."""
    _, height, width, _ = frames.shape
    x, y, w, h = rect
    x0 = min(max(int(round(x)), 0), width - 1)
    y0 = min(max(int(round(y)), 0), height - 1)
    x1 = min(max(int(round(x + w)), x0 + 1), width)
    y1 = min(max(int(round(y + h)), y0 + 1), height)
    out_w, out_h = out_size
    out = np.empty((frames.shape[0], out_h, out_w, 3), dtype=np.float32)
    for i, frame in enumerate(frames):
        patch = frame[y0:y1, x0:x1]
        out[i] = cv2.resize(patch, (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Photometric augmentation
# ---------------------------------------------------------------------------


def _grayscale(frames: np.ndarray) -> np.ndarray:
    lum = frames @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    return np.repeat(lum[..., None], 3, axis=-1)


def _adjust_hue(frames: np.ndarray, shift: float) -> np.ndarray:
    out = np.empty_like(frames)
    for i, frame in enumerate(frames):
        hsv = cv2.cvtColor(frame, cv2.COLOR_RGB2HSV)
        hsv[..., 0] = np.mod(hsv[..., 0] + shift * 360.0, 360.0)
        out[i] = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    return out


def _augment_traced(
    view: View, policy: AugmentPolicy, rng: np.random.Generator
) -> tuple[View, dict[str, bool]]:
    """Augment and report which transforms actually fired (for rate checks)."""
    frames = view.frames.astype(np.float32, copy=True)
    is_global = view.kind == GLOBAL_TEMPORAL
    trace = {"color_jitter": False, "grayscale": False, "blur": False, "solarize": False}

    if rng.uniform() < policy.p_color_jitter:
        trace["color_jitter"] = True
        b = rng.uniform(max(0.0, 1 - policy.brightness), 1 + policy.brightness)
        c = rng.uniform(max(0.0, 1 - policy.contrast), 1 + policy.contrast)
        s = rng.uniform(max(0.0, 1 - policy.saturation), 1 + policy.saturation)
        hshift = rng.uniform(-policy.hue, policy.hue)
        frames = np.clip(frames * b, 0.0, 1.0)
        mean = _grayscale(frames).mean(axis=(1, 2, 3), keepdims=True)
        frames = np.clip(mean + (frames - mean) * c, 0.0, 1.0)
        gray = _grayscale(frames)
        frames = np.clip(gray + (frames - gray) * s, 0.0, 1.0)
        if policy.hue > 0:
            frames = _adjust_hue(frames, hshift)

    if rng.uniform() < policy.p_grayscale:
        trace["grayscale"] = True
        frames = _grayscale(frames)

    # Blur and solarization are global-only, but their coin flips are drawn for
    # every view so that a view's rng consumption does not depend on its kind.
    blur_coin = rng.uniform()
    sigma = rng.uniform(*policy.blur_sigma)
    solarize_coin = rng.uniform()
    if is_global and blur_coin < policy.p_blur_global:
        trace["blur"] = True
        frames = np.stack([cv2.GaussianBlur(f, (0, 0), sigma) for f in frames])
    if is_global and solarize_coin < policy.p_solarize_global:
        trace["solarize"] = True
        frames = np.where(frames >= policy.solarize_threshold, 1.0 - frames, frames)

    return replace(view, frames=np.clip(frames, 0.0, 1.0).astype(np.float32)), trace


def augment_view(view: View, policy: AugmentPolicy, rng: np.random.Generator) -> View:
    """Apply the stochastic policy with one parameter draw shared by all frames.

    Blur and solarization are restricted to global temporal views.  Output is
    clamped to [0, 1].
    """
    augmented, _ = _augment_traced(view, policy, rng)
    return augmented


# ---------------------------------------------------------------------------
# View assembly
# ---------------------------------------------------------------------------


def sample_views(
    record: ClipRecord,
    cfg: ViewConfig,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    source: np.ndarray | None = None,
) -> ViewBatch:
    """Build the full augmented view set for one clip.

    ``source`` may carry the clip's already-decoded frames (T, H, W, 3) in
    [0, 1] to skip disk reads in hot loops.
    """
    if cfg.crop_source == "gt_boxes" and record.boxes is None:
        raise ValidationError(
            f"clip {record.clip_id} has no ground-truth boxes; use crop_source='random'"
        )

    if source is None:
        source = load_clip(record, list(range(record.num_frames)))
    height, width = source.shape[1], source.shape[2]
    full_rect = (0.0, 0.0, float(width), float(height))
    local_aspect = cfg.local_size[0] / cfg.local_size[1]

    globals_ = []
    for _ in range(cfg.num_global):
        idx = segment_sample(record.num_frames, cfg.global_frames, "train", rng)
        view = View(_extract(source[idx], full_rect, cfg.global_size), GLOBAL_TEMPORAL, idx, full_rect)
        globals_.append(augment_view(view, policy, rng))

    local_temporals = []
    for k in cfg.local_frame_choices:
        idx = segment_sample(record.num_frames, k, "train", rng)
        view = View(_extract(source[idx], full_rect, cfg.global_size), LOCAL_TEMPORAL, idx, full_rect)
        local_temporals.append(augment_view(view, policy, rng))

    local_spatials = []
    for _ in range(cfg.num_local_spatial):
        k = int(rng.choice(cfg.local_frame_choices))
        idx = segment_sample(record.num_frames, k, "train", rng)
        if cfg.crop_source == "gt_boxes":
            center_frame = idx[len(idx) // 2]
            boxes = record.boxes.get(center_frame, []) if record.boxes else []
            if boxes:
                rect = bbox_guided_crop(boxes, (width, height), local_aspect, rng)
            else:
                rect = random_crop_rect((width, height), cfg.local_crop_scale, local_aspect, rng)
        else:
            rect = random_crop_rect((width, height), cfg.local_crop_scale, local_aspect, rng)
        view = View(_extract(source[idx], rect, cfg.local_size), LOCAL_SPATIAL, idx, rect)
        local_spatials.append(augment_view(view, policy, rng))

    return ViewBatch(globals_, local_temporals, local_spatials)


def eval_view(record: ClipRecord, cfg: ViewConfig) -> View:
    """Deterministic evaluation view: segment centers at global geometry, no augmentation."""
    idx = segment_sample(record.num_frames, cfg.global_frames, "eval")
    source = load_clip(record, idx)
    height, width = source.shape[1], source.shape[2]
    full_rect = (0.0, 0.0, float(width), float(height))
    return View(_extract(source, full_rect, cfg.global_size), GLOBAL_TEMPORAL, idx, full_rect)
