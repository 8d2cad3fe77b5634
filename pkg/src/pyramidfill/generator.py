"""Image generator modulated by the semantic prior pyramid.

A small strided encoder maps the masked image to the coarsest scale; the
decoder is a stack of SPADE residual blocks whose normalization parameters
are predicted from the matching pyramid level, so the semantic prior steers
denormalization at every scale on the way back up to full resolution.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

_SLOPE = 0.2


class SPADE(nn.Module):
    """Spatially-adaptive denormalization.

    The feature map is normalized per sample and channel with no learned
    affine terms; scale and shift are then predicted per pixel from the
    conditioning map. Heads start at zero, so a fresh block is exactly the
    parameter-free normalization.
    """

    def __init__(self, feat_ch: int, cond_ch: int, hidden: int = 128):
        super().__init__()
        self.shared = nn.Conv2d(cond_ch, hidden, kernel_size=3, padding=1)
        self.gamma = nn.Conv2d(hidden, feat_ch, kernel_size=3, padding=1)
        self.beta = nn.Conv2d(hidden, feat_ch, kernel_size=3, padding=1)
        with torch.no_grad():
            self.gamma.weight.zero_()
            self.gamma.bias.zero_()
            self.beta.weight.zero_()
            self.beta.bias.zero_()

    def forward(self, feature: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        mean = feature.mean(dim=(2, 3), keepdim=True)
        var = feature.var(dim=(2, 3), keepdim=True, unbiased=False)
        normalized = (feature - mean) / torch.sqrt(var + 1e-5)
        if cond.shape[-2:] != feature.shape[-2:]:
            cond = F.interpolate(cond, size=feature.shape[-2:], mode="nearest")
        actv = F.relu(self.shared(cond))
        return normalized * (1.0 + self.gamma(actv)) + self.beta(actv)


class SPADEResBlock(nn.Module):
    """Residual block with SPADE before every convolution."""

    def __init__(self, in_ch: int, out_ch: int, cond_ch: int, hidden: int = 128):
        super().__init__()
        mid = min(in_ch, out_ch)
        self.norm1 = SPADE(in_ch, cond_ch, hidden)
        self.conv1 = nn.Conv2d(in_ch, mid, kernel_size=3, padding=1)
        self.norm2 = SPADE(mid, cond_ch, hidden)
        self.conv2 = nn.Conv2d(mid, out_ch, kernel_size=3, padding=1)
        self.learned_skip = in_ch != out_ch
        if self.learned_skip:
            self.norm_s = SPADE(in_ch, cond_ch, hidden)
            self.conv_s = nn.Conv2d(in_ch, out_ch, kernel_size=1, bias=False)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        skip = self.conv_s(self.norm_s(x, cond)) if self.learned_skip else x
        y = self.conv1(F.leaky_relu(self.norm1(x, cond), _SLOPE))
        y = self.conv2(F.leaky_relu(self.norm2(y, cond), _SLOPE))
        return skip + y


def _encoder_strides(levels: int) -> tuple[int, int, int]:
    # three convs whose strides multiply to 2**(levels-1)
    need = levels - 1
    if need > 3:
        raise ValueError(f"cannot reach 1/{2**need} scale with three convolutions")
    return tuple(2 if i >= 3 - need else 1 for i in range(3))


class Generator(nn.Module):
    def __init__(
        self,
        levels: int = 3,
        channels: tuple[int, ...] = (64, 128, 256),
        prior_channels: tuple[int, ...] = (64, 128, 256),
        bottom_blocks: int = 8,
        spade_hidden: int = 128,
    ):
        super().__init__()
        if len(channels) != levels or len(prior_channels) != levels:
            raise ValueError("need one generator and one prior width per level")
        self.levels = levels
        strides = _encoder_strides(levels)
        widths = [channels[min(i, levels - 1)] for i in range(3)]
        enc = []
        in_ch = 4
        for width, stride in zip(widths, strides):
            enc.append(nn.Conv2d(in_ch, width, kernel_size=3, stride=stride, padding=1))
            in_ch = width
        self.enc = nn.ModuleList(enc)

        self.bottom = nn.ModuleList(
            SPADEResBlock(channels[-1], channels[-1], prior_channels[-1], spade_hidden)
            for _ in range(bottom_blocks)
        )
        # one up-block per transition L->L-1, ..., 2->1 (finer width, finer prior)
        self.ups = nn.ModuleList(
            SPADEResBlock(channels[l + 1], channels[l], prior_channels[l], spade_hidden)
            for l in range(levels - 2, -1, -1)
        )
        self.to_rgb = nn.Conv2d(channels[0], 3, kernel_size=3, padding=1)

    def encode_image(self, masked_image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = torch.cat([masked_image, mask], dim=1)
        for conv in self.enc:
            x = F.leaky_relu(conv(x), _SLOPE)
        return x

    def decode(self, feat: torch.Tensor, pyramid: list[torch.Tensor]) -> torch.Tensor:
        if len(pyramid) != self.levels:
            raise ValueError(f"expected {self.levels} pyramid levels, got {len(pyramid)}")
        x = feat
        for block in self.bottom:
            x = block(x, pyramid[-1])
        for i, block in enumerate(self.ups):
            level = self.levels - 2 - i  # condition on the next finer prior
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(x, pyramid[level])
        x = self.to_rgb(F.leaky_relu(x, _SLOPE))
        return torch.tanh(x)

    def forward(
        self, masked_image: torch.Tensor, mask: torch.Tensor, pyramid: list[torch.Tensor]
    ) -> torch.Tensor:
        return self.decode(self.encode_image(masked_image, mask), pyramid)
