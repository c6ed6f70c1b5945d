"""Divided space-time attention transformer over variable-size token grids.

One parameter set serves every view geometry: spatial and temporal positional
tables are stored at a maximum grid size and interpolated (bilinear in space,
linear in time) to whatever token grid a view produces.  Each encoder block
applies temporal self-attention (every spatial location attends across its
time indices, the class token across all tokens), then spatial self-attention
(within-frame, class token across all tokens), then an MLP, all pre-normed
with residual connections.  The class-token embedding after the final norm is
the clip feature; a small MLP head maps it onto prototype scores for the
distillation objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class ShapeError(ValueError):
    """Input geometry incompatible with the configured patch/token grid."""


@dataclass(frozen=True)
class BackboneConfig:
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 4
    num_heads: int = 4
    max_spatial_tokens: int = 196
    max_temporal_tokens: int = 16
    proj_hidden_dim: int = 256
    proj_output_dim: int = 256
    proj_layers: int = 3

    def __post_init__(self) -> None:
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.proj_output_dim < 2:
            raise ValueError("proj_output_dim must be >= 2")
        side = math.isqrt(self.max_spatial_tokens)
        if side * side != self.max_spatial_tokens:
            raise ValueError("max_spatial_tokens must be a perfect square")

    @property
    def spatial_table_side(self) -> int:
        return math.isqrt(self.max_spatial_tokens)

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls()

    @classmethod
    def paper(cls) -> "BackboneConfig":
        return cls(
            patch_size=16,
            embed_dim=768,
            depth=12,
            num_heads=12,
            proj_hidden_dim=2048,
            proj_output_dim=4096,
        )


def trunc_normal_(tensor: torch.Tensor, std: float, generator: torch.Generator | None = None) -> None:
    """In-place normal init clipped to two standard deviations."""
    with torch.no_grad():
        tensor.normal_(0.0, std, generator=generator)
        tensor.clamp_(-2 * std, 2 * std)


def _multi_head_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, num_heads: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention; returns (output, softmax weights).

    q: (B, Lq, m); k, v: (B, Lk, m).  Weights have shape (B, heads, Lq, Lk)
    and each row sums to one.
    """
    bsz, lq, dim = q.shape
    lk = k.shape[1]
    head_dim = dim // num_heads
    q = q.view(bsz, lq, num_heads, head_dim).transpose(1, 2)
    k = k.view(bsz, lk, num_heads, head_dim).transpose(1, 2)
    v = v.view(bsz, lk, num_heads, head_dim).transpose(1, 2)
    weights = torch.softmax(q @ k.transpose(-2, -1) * head_dim**-0.5, dim=-1)
    out = (weights @ v).transpose(1, 2).reshape(bsz, lq, dim)
    return out, weights


class _Attention(nn.Module):
    """Shared qkv/out projections for one attention stage of a block."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)


class DividedBlock(nn.Module):
    """Temporal attention, spatial attention, MLP; pre-norm residuals."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.norm_t = nn.LayerNorm(dim)
        self.attn_t = _Attention(dim, num_heads)
        self.norm_s = nn.LayerNorm(dim)
        self.attn_s = _Attention(dim, num_heads)
        self.norm_m = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def _stage(
        self,
        x: torch.Tensor,
        attn: _Attention,
        norm: nn.LayerNorm,
        n_t: int,
        n_s: int,
        over_time: bool,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """One attention stage; returns (residual output, cls attention weights)."""
        bsz, _, dim = x.shape
        h = attn.num_heads
        q, k, v = attn.qkv(norm(x)).chunk(3, dim=-1)

        # Patch tokens attend within their temporal column or within their frame.
        qp = q[:, 1:].view(bsz, n_t, n_s, dim)
        kp = k[:, 1:].view(bsz, n_t, n_s, dim)
        vp = v[:, 1:].view(bsz, n_t, n_s, dim)
        if over_time:
            qp = qp.transpose(1, 2).reshape(bsz * n_s, n_t, dim)
            kp = kp.transpose(1, 2).reshape(bsz * n_s, n_t, dim)
            vp = vp.transpose(1, 2).reshape(bsz * n_s, n_t, dim)
        else:
            qp = qp.reshape(bsz * n_t, n_s, dim)
            kp = kp.reshape(bsz * n_t, n_s, dim)
            vp = vp.reshape(bsz * n_t, n_s, dim)
        out_p, _ = _multi_head_attention(qp, kp, vp, h)
        if over_time:
            out_p = out_p.view(bsz, n_s, n_t, dim).transpose(1, 2)
        out_p = out_p.reshape(bsz, n_t * n_s, dim)

        # The class token attends over every token in both stages.
        out_c, w_cls = _multi_head_attention(q[:, :1], k, v, h)
        return attn.proj(torch.cat([out_c, out_p], dim=1)), w_cls

    def forward(
        self, x: torch.Tensor, n_t: int, n_s: int, capture: dict | None = None
    ) -> torch.Tensor:
        res_t, _ = self._stage(x, self.attn_t, self.norm_t, n_t, n_s, over_time=True)
        x = x + res_t
        res_s, w_cls = self._stage(x, self.attn_s, self.norm_s, n_t, n_s, over_time=False)
        x = x + res_s
        if capture is not None:
            capture["cls_spatial_weights"] = w_cls.detach().clone()
        x = x + self.mlp(self.norm_m(x))
        return x


class ProjectionHead(nn.Module):
    """MLP from the clip feature onto prototype scores.

    The MLP output is L2-normalized and matched against row-normalized
    prototype vectors, so scores are bounded cosine similarities; an
    unbounded head collapses the sharpened targets to uniform because weight
    decay can shrink the score spread freely.  Turning scores into a
    distribution still happens downstream (temperature sharpening).
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, num_layers: int = 3):
        super().__init__()
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        layers: list[nn.Module] = []
        dim = in_dim
        for _ in range(num_layers):
            layers += [nn.Linear(dim, hidden_dim), nn.GELU()]
            dim = hidden_dim
        # Drop the trailing activation; the last MLP layer feeds the bottleneck.
        self.layers = nn.Sequential(*layers[:-1])
        self.prototypes = nn.Parameter(torch.zeros(out_dim, hidden_dim))

    def init_weights(self, generator: torch.Generator | None = None) -> None:
        for module in self.layers:
            if isinstance(module, nn.Linear):
                std = math.sqrt(2.0 / (module.in_features + module.out_features))
                trunc_normal_(module.weight, std, generator)
                nn.init.zeros_(module.bias)
        trunc_normal_(self.prototypes, 0.02, generator)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        x = self.layers(feature)
        x = F.normalize(x, dim=-1, eps=1e-8)
        protos = F.normalize(self.prototypes, dim=-1, eps=1e-8)
        return x @ protos.T


class SpaceTimeEncoder(nn.Module):
    """Patch embedding + positional tables + divided attention blocks."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        m = config.embed_dim
        self.patch_embed = nn.Conv2d(3, m, config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, m))
        self.cls_pos = nn.Parameter(torch.zeros(1, 1, m))
        self.pos_spatial = nn.Parameter(torch.zeros(1, config.max_spatial_tokens, m))
        self.pos_temporal = nn.Parameter(torch.zeros(1, config.max_temporal_tokens, m))
        self.blocks = nn.ModuleList(
            DividedBlock(m, config.num_heads) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(m)

    def init_weights(self, generator: torch.Generator | None = None) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                trunc_normal_(module.weight, 0.02, generator)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        for table in (self.cls_token, self.cls_pos, self.pos_spatial, self.pos_temporal):
            trunc_normal_(table, 0.02, generator)

    def patchify(self, frames: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        """(B, K, H, W, 3) frames -> ((B, K, n_s, m) embeddings, (grid_h, grid_w))."""
        if frames.ndim != 5 or frames.shape[-1] != 3:
            raise ShapeError(f"expected (B, K, H, W, 3), got {tuple(frames.shape)}")
        p = self.config.patch_size
        bsz, k, height, width, _ = frames.shape
        if height % p or width % p:
            raise ShapeError(f"frame size {height}x{width} must be a multiple of patch size {p}")
        x = frames.permute(0, 1, 4, 2, 3).reshape(bsz * k, 3, height, width)
        x = self.patch_embed(x)  # (B*K, m, gh, gw)
        gh, gw = x.shape[-2], x.shape[-1]
        x = x.flatten(2).transpose(1, 2).reshape(bsz, k, gh * gw, -1)
        return x, (gh, gw)

    def _spatial_pos(self, grid: tuple[int, int]) -> torch.Tensor:
        gh, gw = grid
        side = self.config.spatial_table_side
        table = self.pos_spatial
        if (gh, gw) == (side, side):
            return table
        t2d = table.reshape(1, side, side, -1).permute(0, 3, 1, 2)
        t2d = F.interpolate(t2d, size=(gh, gw), mode="bilinear", align_corners=True)
        return t2d.permute(0, 2, 3, 1).reshape(1, gh * gw, -1)

    def _temporal_pos(self, n_t: int) -> torch.Tensor:
        table = self.pos_temporal
        if n_t == table.shape[1]:
            return table
        t1d = table.transpose(1, 2)  # (1, m, Tmax)
        t1d = F.interpolate(t1d, size=n_t, mode="linear", align_corners=True)
        return t1d.transpose(1, 2)

    def positional_encode(self, patches: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        """Add interpolated positional embeddings and prepend the class token.

        patches: (B, K, n_s, m) -> tokens (B, 1 + K*n_s, m), time-major patch order.
        """
        bsz, n_t, n_s, m = patches.shape
        pos_s = self._spatial_pos(grid)  # (1, n_s, m)
        pos_t = self._temporal_pos(n_t)  # (1, n_t, m)
        x = patches + pos_s[:, None, :, :] + pos_t[:, :, None, :]
        x = x.reshape(bsz, n_t * n_s, m)
        cls = (self.cls_token + self.cls_pos).expand(bsz, -1, -1)
        return torch.cat([cls, x], dim=1)

    def encode(self, frames: torch.Tensor, capture: dict | None = None) -> torch.Tensor:
        """Full forward pass; returns the class-token feature (B, m).

        When ``capture`` is a dict, the final block stores its class-token
        spatial attention weights there without perturbing the computation.
        """
        patches, grid = self.patchify(frames)
        n_t, n_s = patches.shape[1], patches.shape[2]
        x = self.positional_encode(patches, grid)
        last = len(self.blocks) - 1
        for i, block in enumerate(self.blocks):
            x = block(x, n_t, n_s, capture=capture if i == last else None)
            if not torch.isfinite(x).all():
                raise FloatingPointError(f"non-finite activations after block {i}")
        if capture is not None:
            capture["grid"] = grid
            capture["n_t"] = n_t
        return self.norm(x)[:, 0]


class ViewEncoder(nn.Module):
    """Backbone plus projection head: the unit that teacher and student share."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.backbone = SpaceTimeEncoder(config)
        self.head = ProjectionHead(
            config.embed_dim, config.proj_hidden_dim, config.proj_output_dim, config.proj_layers
        )

    def init_weights(self, generator: torch.Generator | None = None) -> None:
        self.backbone.init_weights(generator)
        self.head.init_weights(generator)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone.encode(frames))
