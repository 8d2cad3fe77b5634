"""Frozen feature extractors that supply multi-scale distillation targets.

The prior learner is trained to match features of a pretext network run on
the *complete* image. The image is first upsampled by 2 so that the pyramid
levels land at H, H/2 and H/4 for a native HxW input. All extractors here
return ``levels`` maps obeying that dyadic layout and are kept frozen.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class PretextExtractor(nn.Module):
    """Base class: subclasses fill ``out_channels`` and ``_features``."""

    out_channels: tuple[int, ...] = ()

    def forward(self, image2x: torch.Tensor) -> list[torch.Tensor]:
        return self._features(image2x)

    def _features(self, image2x: torch.Tensor) -> list[torch.Tensor]:  # pragma: no cover
        raise NotImplementedError


class StubExtractor(PretextExtractor):
    """Seeded random conv pyramid. Cheap, deterministic, training-free.

    Useful as a stand-in teacher: the targets are arbitrary but fixed, so
    distillation still measures whether the student can match a function of
    the full image from partial context.
    """

    def __init__(self, channels: tuple[int, ...] = (32, 64, 128), seed: int = 0):
        super().__init__()
        self.out_channels = tuple(channels)
        generator = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 3
        for ch in channels:
            conv = nn.Conv2d(in_ch, ch, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * 0.2)
                conv.bias.zero_()
            layers.append(conv)
            in_ch = ch
        self.stages = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def _features(self, image2x):
        feats = []
        x = image2x
        for conv in self.stages:
            x = torch.tanh(conv(x))
            feats.append(x)
        return feats


class EdgeExtractor(PretextExtractor):
    """Sobel gradient-magnitude pyramid; responds only to structure."""

    def __init__(self, levels: int = 3):
        super().__init__()
        self.levels = levels
        self.out_channels = (1,) * levels
        kx = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
        self.register_buffer("_kx", kx[None, None])
        self.register_buffer("_ky", kx.t()[None, None])

    def _features(self, image2x):
        gray = image2x.mean(dim=1, keepdim=True)
        feats = []
        for _ in range(self.levels):
            gray = F.avg_pool2d(gray, kernel_size=2)
            # replicate padding: constant inputs stay exactly edge-free
            padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
            gx = F.conv2d(padded, self._kx)
            gy = F.conv2d(padded, self._ky)
            feats.append(torch.sqrt(gx * gx + gy * gy + 1e-12))
        return feats


class BackboneExtractor(PretextExtractor):
    """Early stages of a torchvision resnet, taps chosen per level.

    Tap ``0`` is the post-stem activation (stride 2), tap ``i >= 1`` is the
    output of ``layer{i}`` (stride ``2**(i+1)``), so consecutive taps keep the
    dyadic spacing the pyramid needs. Weights load from a local file when
    given; the network is frozen either way.
    """

    def __init__(
        self,
        arch: str = "resnet18",
        stages: tuple[int, ...] = (0, 1, 2),
        weights_path: str = "",
    ):
        super().__init__()
        import torchvision.models as tvm

        if sorted(stages) != list(stages):
            raise ValueError("backbone stages must be increasing")
        if any(b - a != 1 for a, b in zip(stages, stages[1:])):
            raise ValueError("backbone stages must be consecutive to keep dyadic scales")
        builder = getattr(tvm, arch, None)
        if builder is None:
            raise ValueError(f"unknown torchvision architecture: {arch}")
        net = builder(weights=None)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layers = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
        self.stages = tuple(stages)
        self.register_buffer("_mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("_std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        with torch.no_grad():
            probe = self._taps(torch.zeros(1, 3, 64, 64))
        self.out_channels = tuple(t.shape[1] for t in probe)

    def _taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        taken = []
        x = self.stem(x)
        if 0 in self.stages:
            taken.append(x)
        x = self.pool(x)
        for i, layer in enumerate(self.layers, start=1):
            if i > max(self.stages):
                break
            x = layer(x)
            if i in self.stages:
                taken.append(x)
        return taken

    def _features(self, image2x):
        x = (image2x + 1.0) * 0.5  # [-1,1] -> [0,1], then ImageNet statistics
        x = (x - self._mean) / self._std
        return self._taps(x)


def build_extractor(
    kind: str,
    levels: int,
    *,
    stub_channels: tuple[int, ...] = (32, 64, 128),
    seed: int = 0,
    weights: str = "",
    arch: str = "",
    stages: tuple[int, ...] = (0, 1, 2),
) -> PretextExtractor:
    """Instantiate one of the registered pretext families."""
    if kind == "stub":
        if len(stub_channels) != levels:
            raise ValueError(f"stub extractor needs {levels} channel widths")
        return StubExtractor(stub_channels, seed=seed)
    if kind == "edge":
        return EdgeExtractor(levels)
    defaults = {"classification": "resnet18", "detection": "resnet50", "segmentation": "resnet50"}
    if kind not in defaults:
        raise ValueError(f"unknown pretext kind: {kind}")
    if len(stages) != levels:
        raise ValueError(f"{kind} extractor needs {levels} backbone stages")
    return BackboneExtractor(arch or defaults[kind], tuple(stages), weights)


def extract_targets(
    extractor: PretextExtractor, image: torch.Tensor, levels: int
) -> list[torch.Tensor]:
    """Teacher features of the complete image at every pyramid scale.

    The input is the native-resolution image; it is bilinearly upsampled by 2
    before the extractor runs, so level ``l`` comes out at ``H / 2**(l-1)``.
    """
    if image.dim() != 4 or image.shape[1] != 3:
        raise ValueError(f"expected B3HW image, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    big = F.interpolate(image, scale_factor=2, mode="bilinear", align_corners=False)
    with torch.no_grad():
        feats = extractor(big)
    if len(feats) != levels:
        raise ValueError(f"extractor produced {len(feats)} maps, expected {levels}")
    for idx, feat in enumerate(feats, start=1):
        want = (h // 2 ** (idx - 1), w // 2 ** (idx - 1))
        if feat.shape[-2:] != want:
            raise ValueError(
                f"level {idx} target is {tuple(feat.shape[-2:])}, expected {want}"
            )
    return [f.detach() for f in feats]
