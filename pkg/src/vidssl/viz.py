"""Attention-location extraction and overlay rendering.

The final encoder block's class-token spatial attention is captured during a
normal forward pass (capture never perturbs the computation), normalized per
frame over that frame's spatial tokens, and the strongest locations are
mapped back to source-frame pixel coordinates through the view's crop
geometry.  Overlays draw a circle per location whose radius reflects the
patch footprint in source pixels, so coarser views produce bigger circles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image, ImageDraw

from .backbone import SpaceTimeEncoder
from .views import View

YELLOW = (255, 220, 40)


class VizError(ValueError):
    """Invalid visualization request."""


@dataclass
class AttentionMap:
    """Class-token spatial attention, per frame and head.

    ``weights`` has shape (frames, heads, n_s); each (frame, head) row is
    normalized over the frame's spatial tokens and sums to one.  The view
    geometry fields map token indices back to source-frame pixels.
    """

    weights: np.ndarray
    grid: tuple[int, int]  # token grid (rows, cols)
    frame_indices: list[int]
    crop_rect: tuple[float, float, float, float]
    view_size: tuple[int, int]  # (W, H) of the encoded view
    patch_size: int


@dataclass
class AttnLocation:
    frame: int  # position within the view's frame list
    head: int | None  # None = head-averaged
    x: float  # source-frame pixel coords of the patch center
    y: float
    weight: float
    radius: float  # patch footprint radius in source pixels


def extract_attention(encoder: SpaceTimeEncoder, view: View) -> AttentionMap:
    """Run the encoder on one view and capture final-block attention."""
    if len(encoder.blocks) == 0:
        raise VizError("cannot capture attention from a zero-depth encoder")
    capture: dict = {}
    frames = torch.from_numpy(view.frames[None]).to(next(encoder.parameters()).dtype)
    with torch.no_grad():
        encoder.encode(frames, capture=capture)
    w = capture["cls_spatial_weights"][0]  # (heads, 1, 1 + n_t*n_s)
    grid = capture["grid"]
    n_t = capture["n_t"]
    n_s = grid[0] * grid[1]
    heads = w.shape[0]
    per_frame = w[:, 0, 1:].reshape(heads, n_t, n_s).permute(1, 0, 2)  # (n_t, heads, n_s)
    per_frame = per_frame / per_frame.sum(dim=-1, keepdim=True)
    height, width = view.frames.shape[1], view.frames.shape[2]
    return AttentionMap(
        weights=per_frame.numpy(),
        grid=grid,
        frame_indices=list(view.frame_indices),
        crop_rect=view.crop_rect,
        view_size=(width, height),
        patch_size=encoder.config.patch_size,
    )


def _token_center_source(
    attn: AttentionMap, token: int
) -> tuple[float, float, float]:
    """(x, y, radius) of a spatial token's patch center in source pixels."""
    rows, cols = attn.grid
    row, col = divmod(token, cols)
    p = attn.patch_size
    cx_view = (col + 0.5) * p
    cy_view = (row + 0.5) * p
    x0, y0, cw, ch = attn.crop_rect
    sx = cw / attn.view_size[0]
    sy = ch / attn.view_size[1]
    radius = 0.5 * p * max(sx, sy)
    return (x0 + cx_view * sx, y0 + cy_view * sy, radius)


def top_k_locations(attn: AttentionMap, k: int, per_head: bool = False) -> list[AttnLocation]:
    """The k strongest spatial tokens per frame, in source coordinates.

    Weights are averaged over heads unless ``per_head`` is set; ties break
    toward the lower token index.
    """
    n_s = attn.weights.shape[-1]
    if not 1 <= k <= n_s:
        raise VizError(f"k must be in [1, {n_s}], got {k}")
    locations = []
    n_frames, n_heads = attn.weights.shape[0], attn.weights.shape[1]
    head_rows = range(n_heads) if per_head else [None]
    for f in range(n_frames):
        for h in head_rows:
            weights = attn.weights[f, h] if h is not None else attn.weights[f].mean(axis=0)
            order = np.lexsort((np.arange(n_s), -weights))
            for token in order[:k]:
                x, y, radius = _token_center_source(attn, int(token))
                locations.append(
                    AttnLocation(frame=f, head=h, x=x, y=y, weight=float(weights[token]), radius=radius)
                )
    return locations


def render_overlay(frame: np.ndarray, locations: list[AttnLocation], out_path) -> None:
    """Write the frame as a PNG with one circle per attention location.

    ``frame`` is (H, W, 3), either uint8 or float in [0, 1].  Locations must
    lie within the frame bounds.
    """
    if frame.dtype != np.uint8:
        frame = np.clip(frame * 255.0, 0, 255).astype(np.uint8)
    height, width = frame.shape[:2]
    for loc in locations:
        if not (0 <= loc.x <= width and 0 <= loc.y <= height):
            raise VizError(f"location ({loc.x:.1f}, {loc.y:.1f}) outside {width}x{height} frame")
    img = Image.fromarray(frame)
    draw = ImageDraw.Draw(img)
    for loc in locations:
        bbox = [loc.x - loc.radius, loc.y - loc.radius, loc.x + loc.radius, loc.y + loc.radius]
        draw.ellipse(bbox, outline=YELLOW, width=max(1, int(round(loc.radius / 6))))
    img.save(out_path, format="PNG")
