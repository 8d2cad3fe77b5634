"""The full inpainting model: prior learner feeding the SPADE generator."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import RunConfig
from .generator import Generator
from .prior import PriorLearner, PriorOutput


def seed_generator(seed: int | None, index: int = 0) -> torch.Generator | None:
    """Isolated RNG stream for (seed, sample index); None passes through."""
    if seed is None:
        return None
    g = torch.Generator()
    # simple splitmix-style mix so neighboring (seed, index) pairs decorrelate
    state = (seed * 0x9E3779B97F4A7C15 + index * 0xBF58476D1CE4E5B9) % (1 << 63)
    g.manual_seed(state)
    return g


class InpaintingModel(nn.Module):
    """Bundles the two trainable halves behind one inference surface."""

    def __init__(
        self,
        cfg: RunConfig,
        target_channels: tuple[int, ...] | None,
    ):
        super().__init__()
        levels = cfg["model.levels"]
        self.mode = cfg["prior.mode"]
        self.levels = levels
        self.image_size = cfg["model.image_size"]
        self.prior = PriorLearner(
            levels=levels,
            channels=cfg["prior.channels"],
            target_channels=target_channels,
            latent_dim=cfg["prior.latent_dim"],
            mode=self.mode,
            image_size=self.image_size,
            top_blocks=cfg["prior.top_blocks"],
            rdb_layers=cfg["prior.rdb_layers"],
            rdb_growth=cfg["prior.rdb_growth"],
            gv_uses_context=cfg["prior.gv_uses_context"],
        )
        self.generator = Generator(
            levels=levels,
            channels=cfg["gen.channels"],
            prior_channels=cfg["prior.channels"],
            bottom_blocks=cfg["gen.bottom_blocks"],
            spade_hidden=cfg["gen.spade_hidden"],
        )

    def check_input(self, image: torch.Tensor, mask: torch.Tensor) -> None:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(f"expected B3HW image, got {tuple(image.shape)}")
        if mask.dim() != 4 or mask.shape[1] != 1:
            raise ValueError(f"expected B1HW mask, got {tuple(mask.shape)}")
        if image.shape[-2:] != mask.shape[-2:]:
            raise ValueError("image and mask sizes differ")
        step = 2 ** (self.levels - 1)
        h, w = image.shape[-2:]
        if h % step or w % step:
            raise ValueError(f"input size {h}x{w} must be divisible by {step}")

    def forward(
        self,
        image: torch.Tensor,
        mask: torch.Tensor,
        *,
        use_posterior: bool = True,
        zhat: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, PriorOutput]:
        """Raw generator output plus the prior bundle (training surface)."""
        self.check_input(image, mask)
        masked = image * (1.0 - mask)
        prior_out = self.prior(
            masked, mask, use_posterior=use_posterior, zhat=zhat, generator=generator
        )
        feat = self.generator.encode_image(masked, mask)
        output = self.generator.decode(feat, prior_out.pyramid)
        return output, prior_out

    @torch.no_grad()
    def inpaint(
        self,
        image: torch.Tensor,
        mask: torch.Tensor,
        *,
        seed: int | None = None,
        sample_index: int = 0,
        composited: bool = True,
    ) -> torch.Tensor:
        """Inference path: deterministic models ignore the seed; probabilistic
        models draw the latent from the standard normal prior."""
        squeeze = image.dim() == 3
        if squeeze:
            image, mask = image[None], mask[None]
        gen = seed_generator(seed, sample_index)
        output, _ = self.forward(image, mask, use_posterior=False, generator=gen)
        if composited:
            output = output * mask + image * (1.0 - mask)
        return output[0] if squeeze else output
