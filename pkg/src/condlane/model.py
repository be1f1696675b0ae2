"""Full detector assembly: features -> proposal head + shape head (+ RIM)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import BackboneConfig, FeatureExtractor
from .config import ModelConfig
from .heads import ProposalHead, ShapeHead
from .rim import RecurrentInstanceModule


@dataclass
class DetectorOutput:
    heatmap: torch.Tensor     # (N, 1, Hp, Wp)
    param_map: torch.Tensor   # (N, Cp, Hp, Wp)
    shared: torch.Tensor      # (N, 66, Y, X)


class LaneDetector(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.extractor = FeatureExtractor(BackboneConfig(
            variant=config.variant,
            encoder_enabled=config.encoder_enabled,
            encoder_heads=config.encoder_heads,
        ))
        self.proposal_head = ProposalHead(
            in_channels=64, param_channels=config.param_channels
        )
        self.shape_head = ShapeHead(
            grid_cols=config.canvas.width // config.shape_downscale
        )
        self.rim = (
            RecurrentInstanceModule(max_steps=config.rim_max_steps)
            if config.rim_enabled
            else None
        )

    def forward(self, images: torch.Tensor) -> DetectorOutput:
        if images.ndim == 3:
            images = images[None]
        h, w = images.shape[-2:]
        if (h, w) != (self.config.canvas.height, self.config.canvas.width):
            raise ValueError(
                f"input {h}x{w} does not match configured canvas "
                f"{self.config.canvas.height}x{self.config.canvas.width}"
            )
        pyramid = self.extractor(images)
        heatmap, param_map = self.proposal_head(pyramid[16])
        shared = self.shape_head.shared_forward(
            pyramid[self.config.shape_downscale]
        )
        return DetectorOutput(heatmap=heatmap, param_map=param_map, shared=shared)
