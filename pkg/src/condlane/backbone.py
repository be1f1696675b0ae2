"""Feature extraction: small residual backbone, spatial attention encoder, FPN.

The encoder keeps features two-dimensional: query/key/value projections are
1x1 convolutions, attention runs over the flattened h*w positions of the
deepest (downscale-32) stage before FPN fusion, and the feed-forward is
convolutional. Positional information enters through a fixed 2D sinusoidal
embedding added to the query/key paths only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANT_BLOCKS = {
    "small": (1, 1, 1, 1),
    "medium": (2, 2, 2, 2),
    "large": (3, 4, 6, 3),
}


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "small"
    stage_channels: Tuple[int, ...] = (32, 64, 128, 256)
    stage_strides: Tuple[int, ...] = (4, 2, 2, 2)
    stage_blocks: Tuple[int, ...] = ()
    fpn_channels: int = 64
    encoder_enabled: bool = True
    encoder_heads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANT_BLOCKS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if len(self.stage_channels) != len(self.stage_strides):
            raise ValueError("stage_channels and stage_strides must align")
        if math.prod(self.stage_strides) != 32:
            raise ValueError("stage strides must multiply to 32")
        if not self.stage_blocks:
            object.__setattr__(self, "stage_blocks", VARIANT_BLOCKS[self.variant])
        if len(self.stage_blocks) != len(self.stage_channels):
            raise ValueError("stage_blocks must align with stage_channels")
        if self.encoder_heads < 1:
            raise ValueError("encoder_heads must be >= 1")

    @property
    def downscales(self) -> Tuple[int, ...]:
        out = []
        s = 1
        for stride in self.stage_strides:
            s *= stride
            out.append(s)
        return tuple(out)


@dataclass
class FeaturePyramid:
    """Uniform-channel features keyed by downscale factor."""

    levels: Dict[int, torch.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.levels) != {4, 8, 16, 32}:
            raise ValueError("pyramid must hold downscales {4, 8, 16, 32}")

    def __getitem__(self, downscale: int) -> torch.Tensor:
        return self.levels[downscale]


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.skip(x))


def sinusoidal_position_embedding(
    channels: int, h: int, w: int, temperature: float = 10000.0,
    device=None, dtype=None,
) -> torch.Tensor:
    """Fixed 2D embedding (channels, h, w): first half encodes row, second column."""
    if channels % 4 != 0:
        raise ValueError("channels must be divisible by 4")
    quarter = channels // 4
    omega = torch.arange(quarter, device=device, dtype=dtype or torch.float32)
    omega = 1.0 / temperature ** (omega / quarter)
    ys = torch.arange(h, device=device, dtype=omega.dtype)[:, None] * omega
    xs = torch.arange(w, device=device, dtype=omega.dtype)[:, None] * omega
    emb_y = torch.cat([ys.sin(), ys.cos()], dim=1)          # (h, channels/2)
    emb_x = torch.cat([xs.sin(), xs.cos()], dim=1)          # (w, channels/2)
    pos = torch.empty(channels, h, w, device=device, dtype=omega.dtype)
    pos[: channels // 2] = emb_y.t()[:, :, None].expand(-1, h, w)
    pos[channels // 2:] = emb_x.t()[:, None, :].expand(-1, h, w)
    return pos


class SpatialAttentionEncoder(nn.Module):
    """One self-attention block over a 2D feature map, shape preserving.

    Query/key carry the positional embedding; value and output projections
    are bias-free so zeroing them reduces the block to its residual paths.
    """

    def __init__(self, channels: int, heads: int = 1):
        super().__init__()
        if channels % max(heads, 1) != 0:
            raise ValueError("channels must divide evenly into heads")
        self.channels = channels
        self.heads = heads
        self.q_proj = nn.Conv2d(channels, channels, 1)
        self.k_proj = nn.Conv2d(channels, channels, 1)
        self.v_proj = nn.Conv2d(channels, channels, 1, bias=False)
        self.out_proj = nn.Conv2d(channels, channels, 1, bias=False)
        self.ff = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        n, c, h, w = x.shape
        pos = sinusoidal_position_embedding(c, h, w, device=x.device, dtype=x.dtype)
        xp = x + pos
        d = c // self.heads
        q = self.q_proj(xp).reshape(n, self.heads, d, h * w)
        k = self.k_proj(xp).reshape(n, self.heads, d, h * w)
        v = self.v_proj(x).reshape(n, self.heads, d, h * w)
        logits = torch.einsum("nhdq,nhdk->nhqk", q, k) / math.sqrt(d)
        attn = torch.softmax(logits, dim=-1)
        attended = torch.einsum("nhqk,nhdk->nhdq", attn, v).reshape(n, c, h, w)
        out = x + self.out_proj(attended)
        out = out + self.ff(out)
        if squeeze:
            out = out[0]
            attn = attn[0]
        if return_attention:
            return out, attn
        return out


class FeaturePyramidFusion(nn.Module):
    """Top-down fusion to a uniform channel count at every downscale."""

    def __init__(self, in_channels: Sequence[int], out_channels: int):
        super().__init__()
        self.lateral = nn.ModuleList(
            nn.Conv2d(c, out_channels, 1) for c in in_channels
        )
        self.smooth = nn.ModuleList(
            nn.Conv2d(out_channels, out_channels, 3, padding=1) for _ in in_channels
        )

    def forward(self, features: Sequence[torch.Tensor]) -> list:
        laterals = [lat(f) for lat, f in zip(self.lateral, features)]
        for i in range(len(laterals) - 1, 0, -1):
            laterals[i - 1] = laterals[i - 1] + F.interpolate(
                laterals[i], size=laterals[i - 1].shape[-2:], mode="nearest"
            )
        return [smooth(lat) for smooth, lat in zip(self.smooth, laterals)]


class FeatureExtractor(nn.Module):
    """Image -> FeaturePyramid at downscales {4, 8, 16, 32}."""

    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = config
        ch = config.stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, ch[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(ch[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        in_ch = ch[0]
        for idx, (out_ch, blocks) in enumerate(zip(ch, config.stage_blocks)):
            # the stem already realizes stage 0's stride of 4
            stride = 1 if idx == 0 else config.stage_strides[idx]
            layers = [BasicBlock(in_ch, out_ch, stride)]
            layers += [BasicBlock(out_ch, out_ch) for _ in range(blocks - 1)]
            stages.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.encoder = (
            SpatialAttentionEncoder(ch[-1], config.encoder_heads)
            if config.encoder_enabled
            else None
        )
        self.fpn = FeaturePyramidFusion(ch, config.fpn_channels)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        squeeze = image.ndim == 3
        if squeeze:
            image = image[None]
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input dims must be divisible by 32, got {h}x{w}")
        x = self.stem(image)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        if self.encoder is not None:
            feats[-1] = self.encoder(feats[-1])
        fused = self.fpn(feats)
        levels = {}
        for downscale, f in zip(self.config.downscales, fused):
            if squeeze:
                f = f[0]
            levels[downscale] = f
        return FeaturePyramid(levels=levels)
