"""Image/mask loading, the mask-ratio protocol, and a synthetic corpus.

Conventions used throughout the package: images are float32 CHW tensors in
[-1, 1]; masks are float32 1HW tensors where 1 marks a missing pixel and 0 a
valid one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

# Half-open ratio intervals (lower, upper]; together they cover (0, 0.6].
BUCKETS: tuple[tuple[float, float], ...] = tuple(
    (round(i * 0.1, 1), round((i + 1) * 0.1, 1)) for i in range(6)
)


@dataclass
class SamplePair:
    """One training/evaluation unit: a ground-truth image and a hole mask."""

    image: torch.Tensor  # 3HW in [-1, 1]
    mask: torch.Tensor  # 1HW in {0, 1}
    name: str = ""

    @property
    def masked_image(self) -> torch.Tensor:
        return self.image * (1.0 - self.mask)


def load_image(path: str | Path, size: int) -> torch.Tensor:
    """Load an RGB image, center-crop to square, resize, map to [-1, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
        if side != size:
            img = img.resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32)
    tensor = torch.from_numpy(arr).permute(2, 0, 1)
    return tensor / 127.5 - 1.0


def load_mask(
    path: str | Path,
    size: int,
    rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Load a grayscale mask, binarize at 128, resize without blurring.

    When ``rng`` is given the mask is flipped horizontally and vertically,
    each with probability 0.5, as cheap augmentation.
    """
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    binary = (arr >= 128).astype(np.float32)
    tensor = torch.from_numpy(binary)[None]
    if tensor.shape[-2:] != (size, size):
        tensor = F.interpolate(tensor[None], size=(size, size), mode="nearest")[0]
    if rng is not None:
        if rng.random() < 0.5:
            tensor = torch.flip(tensor, dims=[-1])
        if rng.random() < 0.5:
            tensor = torch.flip(tensor, dims=[-2])
    return tensor


def mask_ratio(mask: torch.Tensor) -> float:
    return float(mask.mean().item())


def bucket_of(ratio: float) -> int:
    """Index of the protocol bucket containing ``ratio``; buckets are (lo, hi]."""
    for idx, (lo, hi) in enumerate(BUCKETS):
        if lo < ratio <= hi + 1e-12:
            return idx
    raise ValueError(f"mask ratio {ratio} is outside the protocol range (0, 0.6]")


def resize_mask(mask: torch.Tensor, level: int) -> torch.Tensor:
    """Nearest-neighbor mask for pyramid level ``level`` (1 = native size)."""
    if level == 1:
        return mask
    factor = 2 ** (level - 1)
    squeeze = mask.dim() == 3
    if squeeze:
        mask = mask[None]
    h, w = mask.shape[-2:]
    out = F.interpolate(mask, size=(h // factor, w // factor), mode="nearest")
    return out[0] if squeeze else out


def composite(output: torch.Tensor, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Keep known pixels from ``image``; take the hole from ``output``."""
    return output * mask + image * (1.0 - mask)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """[-1, 1] CHW tensor -> HWC uint8 array. Inverse of the loader mapping."""
    arr = ((image.clamp(-1.0, 1.0) + 1.0) * 127.5).round()
    return arr.to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    # copy: PIL hands out read-only buffers that from_numpy would alias
    tensor = torch.from_numpy(np.ascontiguousarray(arr).copy()).float().permute(2, 0, 1)
    return tensor / 127.5 - 1.0


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


def _draw_gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = xs * np.cos(angle) + ys * np.sin(angle)
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-8)
    lo = rng.uniform(0.0, 0.45, size=3)
    hi = rng.uniform(0.55, 1.0, size=3)
    return lo[None, None] + ramp[..., None] * (hi - lo)[None, None]


def _stamp_shapes(rng: np.random.Generator, canvas: np.ndarray) -> None:
    size = canvas.shape[0]
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0.1 * size, 0.9 * size, size=2)
        if rng.random() < 0.5:
            radius = rng.uniform(0.08, 0.25) * size
            region = (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2
        else:
            hh = rng.uniform(0.08, 0.3) * size
            ww = rng.uniform(0.08, 0.3) * size
            region = (np.abs(ys - cy) <= hh) & (np.abs(xs - cx) <= ww)
        canvas[region] = color


def _stroke_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Free-form strokes: random walks stamped with a circular brush."""
    mask = np.zeros((size, size), dtype=np.float32)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    for _ in range(int(rng.integers(1, 5))):
        y, x = rng.uniform(0.1 * size, 0.9 * size, size=2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        brush = rng.uniform(0.03, 0.09) * size
        for _ in range(int(rng.integers(4, 12))):
            step = rng.uniform(0.05, 0.15) * size
            angle += rng.uniform(-1.0, 1.0)
            ny, nx = y + step * np.sin(angle), x + step * np.cos(angle)
            # stamp along the segment so strokes are connected
            for t in np.linspace(0.0, 1.0, 8):
                py, px = y + (ny - y) * t, x + (nx - x) * t
                mask[(ys - py) ** 2 + (xs - px) ** 2 <= brush**2] = 1.0
            y, x = np.clip(ny, 0, size - 1), np.clip(nx, 0, size - 1)
    return mask


def make_synthetic_pair(seed: int, size: int = 64) -> SamplePair:
    """Deterministic image/mask pair; the mask ratio lands in (0.05, 0.6]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    canvas = _draw_gradient(rng, size)
    _stamp_shapes(rng, canvas)
    image = torch.from_numpy(canvas.astype(np.float32)).permute(2, 0, 1) * 2.0 - 1.0

    mask = _stroke_mask(rng, size)
    for _ in range(16):
        ratio = float(mask.mean())
        if 0.05 < ratio <= 0.6:
            break
        mask = _stroke_mask(rng, size)
    else:
        # extremely unlucky walk: fall back to a centered box at a legal ratio
        mask = np.zeros((size, size), dtype=np.float32)
        half = max(1, int(size * 0.25))
        mid = size // 2
        mask[mid - half : mid + half, mid - half : mid + half] = 1.0
    return SamplePair(image=image, mask=torch.from_numpy(mask)[None], name=f"synthetic-{seed}")


def synthetic_batch(seeds: Sequence[int], size: int = 64) -> tuple[torch.Tensor, torch.Tensor]:
    pairs = [make_synthetic_pair(s, size) for s in seeds]
    return torch.stack([p.image for p in pairs]), torch.stack([p.mask for p in pairs])


# ---------------------------------------------------------------------------
# Directory-backed corpus
# ---------------------------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def list_images(root: str | Path) -> list[Path]:
    root = Path(root)
    files = [p for p in sorted(root.rglob("*")) if p.suffix.lower() in _IMAGE_SUFFIXES]
    if not files:
        raise FileNotFoundError(f"no images under {root}")
    return files


class PairSource:
    """Streams image/mask pairs from directories, or synthesizes them.

    With ``mask_dir`` unset, masks are generated per draw from the seeded
    stream, so a fixed seed yields a fixed sequence of pairs.
    """

    def __init__(
        self,
        image_dir: str | Path | None = None,
        mask_dir: str | Path | None = None,
        *,
        synthetic: int = 0,
        size: int = 64,
        seed: int = 0,
    ):
        self.size = size
        self.seed = seed
        self.synthetic = synthetic
        if synthetic and image_dir:
            raise ValueError("pass either a directory or a synthetic count, not both")
        if not synthetic and not image_dir:
            raise ValueError("need an image directory or a synthetic count")
        self.images = list_images(image_dir) if image_dir else []
        self.masks = list_images(mask_dir) if mask_dir else []

    def __len__(self) -> int:
        return self.synthetic or len(self.images)

    def pair(self, index: int, rng: np.random.Generator | None = None) -> SamplePair:
        if self.synthetic:
            return make_synthetic_pair(self.seed * 1_000_003 + index, self.size)
        image = load_image(self.images[index], self.size)
        if self.masks:
            rng = rng or np.random.Generator(np.random.PCG64(self.seed * 1_000_003 + index))
            mask_path = self.masks[int(rng.integers(len(self.masks)))]
            mask = load_mask(mask_path, self.size, rng)
        else:
            mask = make_synthetic_pair(self.seed * 1_000_003 + index, self.size).mask
        return SamplePair(image=image, mask=mask, name=self.images[index].stem)

    def batches(self, batch_size: int, iters: int) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        """Endless shuffled batches; the schedule depends only on the seed."""
        rng = np.random.Generator(np.random.PCG64(self.seed))
        n = len(self)
        for _ in range(iters):
            idx = rng.integers(0, n, size=batch_size)
            pairs = [self.pair(int(i), rng) for i in idx]
            yield torch.stack([p.image for p in pairs]), torch.stack([p.mask for p in pairs])
