"""Proposal head and conditional shape head with per-instance dynamic kernels.

A proposal cell carries either a full 134-dim kernel vector (direct mode) or
a 128-dim feature consumed by the recurrent instance module. Kernel layout:
[0:66] location weights, [66] location bias, [67:133] offset weights,
[133] offset bias; both branches act as 1x1 dynamic convolutions on the
66-channel shared shape feature (64 learned + 2 coordinate channels).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .geometry import LanePolyline

KERNEL_DIM = 134
RIM_FEATURE_DIM = 128
SHARED_LEARNED_CHANNELS = 64
SHARED_CHANNELS = SHARED_LEARNED_CHANNELS + 2
_BRANCH = SHARED_CHANNELS + 1  # weights + bias


@dataclass
class InstancePrediction:
    """One lane instance's dense maps plus the decoded polyline."""

    location_map: torch.Tensor        # (1, Y, X) row logits
    offset_map: torch.Tensor          # (1, Y, X)
    range_logits: torch.Tensor        # (Y, 2)
    decoded: Optional[LanePolyline] = None


def split_kernel(kernel: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor,
                                                torch.Tensor, torch.Tensor]:
    if kernel.shape != (KERNEL_DIM,):
        raise ValueError(f"kernel must have {KERNEL_DIM} entries, got {tuple(kernel.shape)}")
    w_loc = kernel[:SHARED_CHANNELS]
    b_loc = kernel[SHARED_CHANNELS]
    w_off = kernel[_BRANCH:_BRANCH + SHARED_CHANNELS]
    b_off = kernel[_BRANCH + SHARED_CHANNELS]
    return w_loc, b_loc, w_off, b_off


def conditional_forward(shared: torch.Tensor, kernel: torch.Tensor
                        ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Apply one instance's dynamic 1x1 convolutions to the shared feature.

    shared: (66, Y, X); returns (location_map, offset_map), each (1, Y, X).
    """
    if shared.ndim != 3 or shared.shape[0] != SHARED_CHANNELS:
        raise ValueError(f"shared feature must be ({SHARED_CHANNELS}, Y, X)")
    w_loc, b_loc, w_off, b_off = split_kernel(kernel)
    loc = torch.einsum("cyx,c->yx", shared, w_loc) + b_loc
    off = torch.einsum("cyx,c->yx", shared, w_off) + b_off
    return loc[None], off[None]


def row_expected_abscissa(location_map: torch.Tensor) -> torch.Tensor:
    """Softmax each row of (..., Y, X) and return the expected column (..., Y)."""
    p = torch.softmax(location_map, dim=-1)
    cols = torch.arange(location_map.shape[-1], device=location_map.device,
                        dtype=p.dtype)
    return (p * cols).sum(dim=-1)


def gather_kernels(param_map: torch.Tensor,
                   points: Sequence[Tuple[int, int]]) -> List[torch.Tensor]:
    """Extract per-point parameter vectors; points are (x, y) grid cells."""
    if param_map.ndim != 3:
        raise ValueError("param_map must be (Cp, Hp, Wp)")
    _, hp, wp = param_map.shape
    out = []
    for x, y in points:
        if not (0 <= x < wp and 0 <= y < hp):
            raise IndexError(f"proposal point ({x}, {y}) outside {wp}x{hp} grid")
        out.append(param_map[:, y, x])
    return out


def _conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ProposalHead(nn.Module):
    """Heatmap + parameter map from the downscale-16 pyramid level."""

    def __init__(self, in_channels: int = 64, param_channels: int = KERNEL_DIM):
        super().__init__()
        if param_channels not in (KERNEL_DIM, RIM_FEATURE_DIM):
            raise ValueError(
                f"param_channels must be {KERNEL_DIM} (direct) or {RIM_FEATURE_DIM} (recurrent)"
            )
        self.param_channels = param_channels
        self.heat_branch = nn.Sequential(
            _conv_bn_relu(in_channels, 64),
            nn.Conv2d(64, 1, 3, padding=1),
        )
        self.param_branch = nn.Sequential(
            _conv_bn_relu(in_channels, 64),
            nn.Conv2d(64, param_channels, 3, padding=1),
        )
        # bias the heatmap towards empty so early training is not swamped
        # by negative focal terms
        nn.init.constant_(self.heat_branch[-1].bias, -2.0)

    def forward(self, feature: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        squeeze = feature.ndim == 3
        if squeeze:
            feature = feature[None]
        heatmap = torch.sigmoid(self.heat_branch(feature))
        params = self.param_branch(feature)
        if squeeze:
            return heatmap[0], params[0]
        return heatmap, params


def coordinate_channels(rows: int, cols: int, device=None,
                        dtype=torch.float32) -> torch.Tensor:
    """(2, rows, cols): channel 0 is x/(X-1) per column, channel 1 is y/(Y-1)."""
    cx = torch.arange(cols, device=device, dtype=dtype) / max(cols - 1, 1)
    cy = torch.arange(rows, device=device, dtype=dtype) / max(rows - 1, 1)
    return torch.stack([
        cx[None, :].expand(rows, cols),
        cy[:, None].expand(rows, cols),
    ])


class ShapeHead(nn.Module):
    """Shared shape features plus the per-row vertical range classifier.

    grid_cols fixes the row width consumed by the range classifier, so one
    head instance is bound to one shape-grid geometry.
    """

    def __init__(self, grid_cols: int, in_channels: int = 64):
        super().__init__()
        self.grid_cols = grid_cols
        self.shared_convs = nn.Sequential(
            _conv_bn_relu(in_channels, 64),
            _conv_bn_relu(64, 64),
            _conv_bn_relu(64, 64),
        )
        self.range_fc = nn.Linear(grid_cols, 2)

    def shared_forward(self, feature: torch.Tensor) -> torch.Tensor:
        """(C, Y, X) or (N, C, Y, X) -> 66-channel shared feature."""
        squeeze = feature.ndim == 3
        if squeeze:
            feature = feature[None]
        learned = self.shared_convs(feature)
        n, _, rows, cols = learned.shape
        coords = coordinate_channels(rows, cols, device=learned.device,
                                     dtype=learned.dtype)
        out = torch.cat([learned, coords[None].expand(n, -1, -1, -1)], dim=1)
        return out[0] if squeeze else out

    def vertical_range(self, location_map: torch.Tensor) -> torch.Tensor:
        """(1, Y, X) location logits -> (Y, 2) per-row range logits."""
        rows = location_map.squeeze(0)
        if rows.ndim != 2 or rows.shape[1] != self.grid_cols:
            raise ValueError(
                f"location map rows must have width {self.grid_cols}, got {tuple(rows.shape)}"
            )
        return self.range_fc(rows)

    def instance_forward(self, shared: torch.Tensor,
                         kernel: torch.Tensor) -> InstancePrediction:
        location_map, offset_map = conditional_forward(shared, kernel)
        return InstancePrediction(
            location_map=location_map,
            offset_map=offset_map,
            range_logits=self.vertical_range(location_map),
        )
