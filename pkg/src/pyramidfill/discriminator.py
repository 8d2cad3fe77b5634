"""Patch discriminator with spectral normalization and feature taps."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm


class PatchDiscriminator(nn.Module):
    """Five stride-2 convolutions followed by a 1-channel patch head.

    ``forward`` returns a sigmoid patch map — the per-patch probability that
    the input is generated — together with pre-activation features from the
    first ``taps`` stages (shallow to deep) for feature matching.
    """

    def __init__(self, channels: tuple[int, ...] = (64, 128, 256, 512, 512), taps: int = 4):
        super().__init__()
        if not 1 <= taps <= len(channels):
            raise ValueError(f"taps must be in 1..{len(channels)}")
        self.taps = taps
        stages = []
        in_ch = 3
        for ch in channels:
            stages.append(
                spectral_norm(nn.Conv2d(in_ch, ch, kernel_size=4, stride=2, padding=1))
            )
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        self.head = spectral_norm(nn.Conv2d(in_ch, 1, kernel_size=3, stride=1, padding=1))

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats = []
        x = image
        for i, conv in enumerate(self.stages):
            pre = conv(x)
            if i < self.taps:
                feats.append(pre)
            x = F.leaky_relu(pre, 0.2)
        patch = torch.sigmoid(self.head(x))
        return patch, feats
