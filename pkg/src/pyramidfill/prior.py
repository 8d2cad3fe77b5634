"""Prior learner: predicts a multi-scale semantic feature pyramid from a
masked image, optionally through a sampled latent code.

The network is a U-Net over a 2x-upsampled masked input. The coarsest
feature map either passes through a stack of residual blocks (deterministic
mode) or is regenerated from a latent vector whose posterior is inferred
from the encoding (probabilistic mode). Finer levels are produced by
pixel-shuffle upsampling fused with encoder skips, so every level keeps the
dyadic layout of the distillation targets.

No normalization layers anywhere: outputs for one sample must not depend on
what else happens to be in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

_SLOPE = 0.2


def _conv(in_ch: int, out_ch: int, k: int = 3, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=k, stride=stride, padding=k // 2)


class ResBlock(nn.Module):
    """Two 3x3 convs with a (projected) identity shortcut; no normalization."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = _conv(in_ch, out_ch)
        self.conv2 = _conv(out_ch, out_ch)
        self.skip = _conv(in_ch, out_ch, k=1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        y = F.leaky_relu(self.conv1(x), _SLOPE)
        y = self.conv2(y)
        return F.leaky_relu(self.skip(x) + y, _SLOPE)


class DenseBlock(nn.Module):
    """Residual dense block: each layer sees all previous ones, then a 1x1
    fusion brings the width back down and the input is added back."""

    def __init__(self, channels: int, layers: int = 4, growth: int = 32):
        super().__init__()
        self.layers = nn.ModuleList(
            _conv(channels + i * growth, growth) for i in range(layers)
        )
        self.fuse = _conv(channels + layers * growth, channels, k=1)

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(F.leaky_relu(layer(torch.cat(feats, dim=1)), _SLOPE))
        return x + self.fuse(torch.cat(feats, dim=1))


@dataclass
class PriorOutput:
    pyramid: list[torch.Tensor]  # level 1 (finest) ... level L (coarsest)
    mu: torch.Tensor | None = None
    logvar: torch.Tensor | None = None
    zhat: torch.Tensor | None = None


def sample_latent(
    mu: torch.Tensor, logvar: torch.Tensor, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Reparameterized posterior draw: mu + exp(logvar/2) * eps."""
    eps = torch.randn(mu.shape, generator=generator, device=mu.device, dtype=mu.dtype)
    return mu + torch.exp(0.5 * logvar) * eps


class PriorLearner(nn.Module):
    def __init__(
        self,
        levels: int = 3,
        channels: tuple[int, ...] = (64, 128, 256),
        target_channels: tuple[int, ...] | None = (64, 64, 128),
        latent_dim: int = 256,
        mode: str = "deterministic",
        image_size: int = 256,
        top_blocks: int = 4,
        rdb_layers: int = 4,
        rdb_growth: int = 32,
        gv_uses_context: bool = False,
    ):
        super().__init__()
        if len(channels) != levels:
            raise ValueError("need one width per level")
        if target_channels is not None and len(target_channels) != levels:
            raise ValueError("need one target width per level")
        if mode not in ("deterministic", "probabilistic"):
            raise ValueError(f"bad mode: {mode}")
        self.levels = levels
        self.channels = tuple(channels)
        self.mode = mode
        self.latent_dim = latent_dim
        self.gv_uses_context = gv_uses_context
        # coarsest feature map of the configured training resolution
        self.base_hw = image_size // 2 ** (levels - 1)

        downs = []
        in_ch = 4  # masked image + mask
        for ch in channels:
            downs.append(_conv(in_ch, ch, stride=2))
            in_ch = ch
        self.downs = nn.ModuleList(downs)
        self.bottleneck = DenseBlock(channels[-1], rdb_layers, rdb_growth)

        self.top_stack = (
            nn.Sequential(*[ResBlock(channels[-1], channels[-1]) for _ in range(top_blocks)])
            if mode == "deterministic"
            else None
        )
        self.shuffle = nn.PixelShuffle(2)
        # level l fuser consumes shuffled level l+1 concatenated with the skip
        self.fusers = nn.ModuleList(
            ResBlock(channels[l + 1] // 4 + channels[l], channels[l])
            for l in range(levels - 1)
        )
        # distillation heads exist only while training; exports drop them
        self.heads = (
            None
            if target_channels is None
            else nn.ModuleList(_conv(channels[l], target_channels[l], k=1) for l in range(levels))
        )

        top_ch = channels[-1]
        if mode == "probabilistic":
            self.post_mean = nn.Linear(top_ch, top_ch)
            self.post_stats = nn.Linear(top_ch, 2 * latent_dim)
            with torch.no_grad():
                # start the posterior at N(mu, 1): zero the log-variance half
                self.post_stats.weight[latent_dim:].zero_()
                self.post_stats.bias[latent_dim:].zero_()
            self.latent_fc = nn.Linear(latent_dim, top_ch * self.base_hw * self.base_hw)
            self.latent_mix = _conv(top_ch * 2, top_ch, k=1) if gv_uses_context else nn.Identity()
            self.latent_res = nn.Sequential(ResBlock(top_ch, top_ch), ResBlock(top_ch, top_ch))

    # -- encoding ----------------------------------------------------------

    def encode(self, masked_image: torch.Tensor, mask: torch.Tensor) -> list[torch.Tensor]:
        """Context features per level, finest first. Inputs are native-res."""
        if masked_image.shape[-2:] != mask.shape[-2:]:
            raise ValueError("image and mask sizes differ")
        big = F.interpolate(masked_image, scale_factor=2, mode="bilinear", align_corners=False)
        big_mask = F.interpolate(mask, scale_factor=2, mode="bilinear", align_corners=False)
        x = torch.cat([big, big_mask], dim=1)
        feats = []
        for down in self.downs:
            x = F.leaky_relu(down(x), _SLOPE)
            feats.append(x)
        feats[-1] = self.bottleneck(feats[-1])
        return feats

    # -- coarsest level ----------------------------------------------------

    def top_deterministic(self, enc_top: torch.Tensor) -> torch.Tensor:
        if self.top_stack is None:
            raise RuntimeError("probabilistic model has no deterministic top path")
        return self.top_stack(enc_top)

    def latent_stats(self, enc_top: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if self.mode != "probabilistic":
            raise RuntimeError("deterministic model has no latent posterior")
        pooled = enc_top.mean(dim=(2, 3))
        hidden = F.leaky_relu(self.post_mean(pooled), _SLOPE)
        stats = self.post_stats(hidden)
        return stats[:, : self.latent_dim], stats[:, self.latent_dim :]

    def top_from_latent(
        self, zhat: torch.Tensor, enc_top: torch.Tensor | None = None
    ) -> torch.Tensor:
        top_ch = self.channels[-1]
        x = self.latent_fc(zhat).view(-1, top_ch, self.base_hw, self.base_hw)
        if enc_top is not None and enc_top.shape[-2:] != x.shape[-2:]:
            # trained at one resolution, asked for another: rescale the seed map
            x = F.interpolate(x, size=enc_top.shape[-2:], mode="bilinear", align_corners=False)
        if self.gv_uses_context:
            if enc_top is None:
                raise ValueError("this model mixes context into the latent decoder")
            x = self.latent_mix(torch.cat([x, enc_top], dim=1))
        return self.latent_res(x)

    # -- refinement --------------------------------------------------------

    def refine_down(self, top: torch.Tensor, enc: list[torch.Tensor]) -> list[torch.Tensor]:
        """Coarse-to-fine recursion; returns the pyramid finest-first."""
        pyramid = [top]
        current = top
        for l in range(self.levels - 2, -1, -1):
            up = self.shuffle(current)
            current = self.fusers[l](torch.cat([up, enc[l]], dim=1))
            pyramid.append(current)
        pyramid.reverse()
        return pyramid

    def project(self, pyramid: list[torch.Tensor]) -> list[torch.Tensor]:
        """Map pyramid levels into the teacher's feature spaces (training only)."""
        if self.heads is None:
            raise RuntimeError("distillation heads were stripped from this model")
        return [head(level) for head, level in zip(self.heads, pyramid)]

    # -- full passes -------------------------------------------------------

    def forward(
        self,
        masked_image: torch.Tensor,
        mask: torch.Tensor,
        *,
        use_posterior: bool = True,
        zhat: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> PriorOutput:
        enc = self.encode(masked_image, mask)
        if self.mode == "deterministic":
            top = self.top_deterministic(enc[-1])
            return PriorOutput(self.refine_down(top, enc))
        mu, logvar = self.latent_stats(enc[-1])
        if zhat is None:
            if use_posterior:
                zhat = sample_latent(mu, logvar, generator)
            else:
                zhat = torch.randn(
                    mu.shape, generator=generator, device=mu.device, dtype=mu.dtype
                )
        top = self.top_from_latent(zhat, enc[-1])
        return PriorOutput(self.refine_down(top, enc), mu, logvar, zhat)
