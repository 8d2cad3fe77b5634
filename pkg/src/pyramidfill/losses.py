"""Objective terms for both training setups.

Reduction conventions, chosen so the weights keep their meaning across
resolutions: distillation, reconstruction and feature-matching terms average
over elements; the diversity denominator SUMS over masked feature elements,
otherwise growing feature maps would silently rescale its perturbation
epsilon. Adversarial logs are clamped away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

_LOG_FLOOR = 1e-12


@dataclass
class LossWeights:
    alpha: float = 3.0  # mask emphasis, distillation
    delta: float = 4.0  # mask emphasis, reconstruction
    lambda1: float = 10.0  # reconstruction
    lambda2: float = 1.0  # adversarial
    lambda3: float = 10.0  # feature matching + perceptual
    lambda4: float = 1.0  # diversity
    lambda5: float = 0.05  # KL
    epsilon: float = 1e-5  # diversity perturbation

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(
            alpha=cfg["loss.alpha"],
            delta=cfg["loss.delta"],
            lambda1=cfg["loss.lambda1"],
            lambda2=cfg["loss.lambda2"],
            lambda3=cfg["loss.lambda3"],
            lambda4=cfg["loss.lambda4"],
            lambda5=cfg["loss.lambda5"],
            epsilon=cfg["loss.epsilon"],
        )


def _clamped_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp_min(_LOG_FLOOR))


def prior_distillation_loss(
    targets: list[torch.Tensor],
    projections: list[torch.Tensor],
    level_masks: list[torch.Tensor],
    alpha: float,
) -> torch.Tensor:
    """Masked-emphasis L1 between teacher targets and projected pyramid.

    Per level the absolute difference is weighted by (1 + alpha * mask) and
    averaged over all elements; levels are then summed.
    """
    if not (len(targets) == len(projections) == len(level_masks)):
        raise ValueError("level counts differ")
    total = None
    for target, proj, mask in zip(targets, projections, level_masks):
        if target.shape != proj.shape:
            raise ValueError(f"target {tuple(target.shape)} vs projection {tuple(proj.shape)}")
        if mask.shape[-2:] != target.shape[-2:]:
            raise ValueError("mask resolution does not match this level")
        term = ((target - proj).abs() * (1.0 + alpha * mask)).mean()
        total = term if total is None else total + term
    return total


def reconstruction_loss(
    real: torch.Tensor, fake: torch.Tensor, mask: torch.Tensor, delta: float
) -> torch.Tensor:
    """L1 with extra weight (1 + delta) on missing pixels."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return ((real - fake).abs() * (1.0 + delta * mask)).mean()


def adversarial_g_loss(fake_patch: torch.Tensor, form: str = "paper") -> torch.Tensor:
    """Generator objective on the fake-probability patch map (minimized).

    Both forms coincide for the generator under this output convention:
    driving the fake's fake-probability toward zero.
    """
    if form not in ("paper", "nonsaturating"):
        raise ValueError(f"unknown adversarial form: {form}")
    return -_clamped_log(1.0 - fake_patch).mean()


def adversarial_d_loss(
    real_patch: torch.Tensor, fake_patch: torch.Tensor, form: str = "paper"
) -> torch.Tensor:
    """Discriminator objective (minimized): real -> 0, fake -> 1.

    The "paper" form is the minimax objective as usually written;
    "nonsaturating" is plain cross-entropy, which keeps gradients alive when
    the discriminator is badly wrong.
    """
    if form == "paper":
        return _clamped_log(real_patch).mean() + _clamped_log(1.0 - fake_patch).mean()
    if form == "nonsaturating":
        return -_clamped_log(1.0 - real_patch).mean() - _clamped_log(fake_patch).mean()
    raise ValueError(f"unknown adversarial form: {form}")


def adversarial_losses(
    disc: nn.Module, real: torch.Tensor, fake: torch.Tensor, form: str = "paper"
) -> tuple[torch.Tensor, torch.Tensor]:
    """(generator loss, discriminator loss) for a real/fake image pair."""
    real_patch, _ = disc(real)
    fake_patch, _ = disc(fake)
    return (
        adversarial_g_loss(fake_patch, form),
        adversarial_d_loss(real_patch, fake_patch.detach(), form),
    )


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed per sample, batch-averaged."""
    per_sample = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0).sum(dim=1)
    return per_sample.mean()


def feature_matching_loss(
    real_feats: list[torch.Tensor], fake_feats: list[torch.Tensor]
) -> torch.Tensor:
    """Mean of per-layer mean-L1 distances; real side treated as constant."""
    if len(real_feats) != len(fake_feats):
        raise ValueError("tap counts differ")
    if not real_feats:
        raise ValueError("no feature layers")
    total = None
    for r, f in zip(real_feats, fake_feats):
        term = (r.detach() - f).abs().mean()
        total = term if total is None else total + term
    return total / len(real_feats)


def feature_matching_perceptual_loss(
    disc_real: list[torch.Tensor],
    disc_fake: list[torch.Tensor],
    perc_real: list[torch.Tensor],
    perc_fake: list[torch.Tensor],
) -> torch.Tensor:
    """Discriminator-tap and perceptual-tap matching, each averaged over taps."""
    return feature_matching_loss(disc_real, disc_fake) + feature_matching_loss(
        perc_real, perc_fake
    )


def perceptual_diversity_loss(
    feats1: list[torch.Tensor],
    feats2: list[torch.Tensor],
    mask: torch.Tensor,
    epsilon: float,
) -> torch.Tensor:
    """Reciprocal masked feature divergence between two samples.

    Per layer: 1 / (sum over masked elements of |phi(f1) - phi(f2)| + eps),
    averaged over layers. The sum (not mean) keeps epsilon meaningful as an
    absolute perturbation. Mask is 1 on missing pixels and is resized to each
    layer without interpolation blur.
    """
    if len(feats1) != len(feats2):
        raise ValueError("tap counts differ")
    if not feats1:
        raise ValueError("no feature layers")
    total = None
    for f1, f2 in zip(feats1, feats2):
        m = mask
        if m.shape[-2:] != f1.shape[-2:]:
            m = F.interpolate(mask, size=f1.shape[-2:], mode="nearest")
        divergence = (f1 * m - f2 * m).abs().sum()
        term = 1.0 / (divergence + epsilon)
        total = term if total is None else total + term
    return total / len(feats1)


def total_deterministic(
    l_prior: torch.Tensor, l_img: torch.Tensor, l_adv: torch.Tensor, w: LossWeights
) -> torch.Tensor:
    return l_prior + w.lambda1 * l_img + w.lambda2 * l_adv


def total_probabilistic(
    l_det: torch.Tensor,
    l_feature: torch.Tensor,
    l_diverse: torch.Tensor,
    l_kl: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    return l_det + w.lambda3 * l_feature + w.lambda4 * l_diverse + w.lambda5 * l_kl


# ---------------------------------------------------------------------------
# Perceptual feature extractors
# ---------------------------------------------------------------------------

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

# torchvision vgg19.features indices of relu1_1 .. relu5_1
_VGG_TAPS = (1, 6, 11, 20, 29)


class PerceptualExtractor(nn.Module):
    """Frozen K-tap feature network over images in [-1, 1]."""

    taps: int = 5

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:  # pragma: no cover
        raise NotImplementedError


class StubPerceptual(PerceptualExtractor):
    """Seeded random strided convs; K fixed feature maps, no pretraining."""

    def __init__(self, taps: int = 5, seed: int = 0):
        super().__init__()
        self.taps = taps
        generator = torch.Generator().manual_seed(seed ^ 0x5EED)
        convs = []
        in_ch = 3
        width = 16
        for i in range(taps):
            conv = nn.Conv2d(in_ch, width, kernel_size=3, stride=1 if i == 0 else 2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * 0.2)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = width
            width = min(width * 2, 64)
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image):
        feats = []
        x = image
        for conv in self.convs:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats


class VGGPerceptual(PerceptualExtractor):
    """relu1_1..relu5_1 taps of VGG19; weights load from a local file."""

    def __init__(self, weights_path: str = ""):
        super().__init__()
        import torchvision.models as tvm

        vgg = tvm.vgg19(weights=None)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            vgg.load_state_dict(state)
        self.features = vgg.features[: _VGG_TAPS[-1] + 1]
        self.tap_idx = set(_VGG_TAPS)
        self.taps = len(_VGG_TAPS)
        self.register_buffer("_mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("_std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, image):
        x = ((image + 1.0) * 0.5 - self._mean) / self._std
        feats = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.tap_idx:
                feats.append(x)
        return feats


def build_perceptual(kind: str, *, seed: int = 0, weights: str = "", taps: int = 5):
    if kind == "stub":
        return StubPerceptual(taps=taps, seed=seed)
    if kind == "vgg19":
        return VGGPerceptual(weights)
    raise ValueError(f"unknown perceptual kind: {kind}")
