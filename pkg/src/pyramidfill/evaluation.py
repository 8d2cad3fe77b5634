"""Metrics, stratified mask-ratio reporting, best-of-k selection, and
cluster visualization of the prior pyramid.

All pixel metrics operate on images mapped to [0, 1]. Reports are stratified
over the six mask-ratio buckets, over three coarser aggregates, and over the
whole set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import BUCKETS, SamplePair, bucket_of, mask_ratio

# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------

PSNR_CAP = 100.0


def to_unit(image: torch.Tensor) -> torch.Tensor:
    """[-1, 1] -> [0, 1] with clamping; metrics live in the unit range."""
    return ((image + 1.0) * 0.5).clamp(0.0, 1.0)


def psnr(real: torch.Tensor, fake: torch.Tensor) -> float:
    """10·log10(1/MSE) on [0,1] images, capped for (near-)exact matches."""
    mse = float(((real - fake) ** 2).mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * float(np.log10(1.0 / mse)), PSNR_CAP)


def mae(real: torch.Tensor, fake: torch.Tensor) -> float:
    return float((real - fake).abs().mean())


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(real: torch.Tensor, fake: torch.Tensor, k1: float = 0.01, k2: float = 0.03) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5, range 1.0), valid positions
    only, averaged over channels."""
    if real.dim() == 3:
        real, fake = real[None], fake[None]
    if real.shape != fake.shape:
        raise ValueError("shape mismatch")
    h, w = real.shape[-2:]
    if h < 11 or w < 11:
        raise ValueError(f"image {h}x{w} smaller than the 11x11 window")
    channels = real.shape[1]
    window = _gaussian_window().to(real.dtype)
    kernel = window.expand(channels, 1, 11, 11).contiguous()

    def filt(x):
        return F.conv2d(x, kernel, groups=channels)  # no padding: valid only

    c1, c2 = k1**2, k2**2  # dynamic range is 1.0
    mu_r, mu_f = filt(real), filt(fake)
    var_r = filt(real * real) - mu_r * mu_r
    var_f = filt(fake * fake) - mu_f * mu_f
    cov = filt(real * fake) - mu_r * mu_f
    score = ((2 * mu_r * mu_f + c1) * (2 * cov + c2)) / (
        (mu_r * mu_r + mu_f * mu_f + c1) * (var_r + var_f + c2)
    )
    return float(score.mean())


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets.

    The cross term uses the eigendecomposition of the symmetrized product
    sqrt(Sa)·Sb·sqrt(Sa), which is PSD, so no complex arithmetic appears.
    Sets smaller than d+1 get a warning and light diagonal regularization.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("expected two n x d embedding matrices with equal d")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per set for a covariance")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False, ddof=1)
    cov_b = np.cov(b, rowvar=False, ddof=1)
    if len(a) < d + 1 or len(b) < d + 1:
        warnings.warn(
            f"covariance rank-deficient (n_a={len(a)}, n_b={len(b)}, d={d}); regularizing",
            stacklevel=2,
        )
        cov_a = cov_a + 1e-6 * np.eye(d)
        cov_b = cov_b + 1e-6 * np.eye(d)
    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


class StubEmbedding(torch.nn.Module):
    """Seeded random conv net + global pooling: a deterministic, frozen
    image embedding so the Fréchet machinery is testable without weights."""

    def __init__(self, dim: int = 16, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.tag = f"stub-embed-d{dim}-s{seed}"
        g = torch.Generator().manual_seed(seed ^ 0xF1D)
        convs = []
        in_ch = 3
        for out_ch in (16, 32, dim):
            conv = torch.nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * 0.3)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = torch.nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def forward(self, images: torch.Tensor) -> np.ndarray:
        x = images
        for conv in self.convs:
            x = torch.tanh(conv(x))
        return x.mean(dim=(2, 3)).cpu().numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Stratified evaluation
# ---------------------------------------------------------------------------

BUCKET_NAMES = tuple(f"{int(lo * 100)}-{int(hi * 100)}%" for lo, hi in BUCKETS)
AGGREGATES: dict[str, tuple[int, ...]] = {
    "0-20%": (0, 1),
    "20-40%": (2, 3),
    "40-60%": (4, 5),
    "All": (0, 1, 2, 3, 4, 5),
}


@dataclass
class Row:
    count: int = 0
    psnr: float = float("nan")
    ssim: float = float("nan")
    mae: float = float("nan")
    fid: float = float("nan")


@dataclass
class MetricReport:
    rows: dict[str, Row]
    k: int
    composited: bool
    embedding_tag: str
    seed: int
    selections: list[dict] = field(default_factory=list)  # per-pair chosen seeds

    def to_table(self) -> str:
        header = "bucket\tcount\tpsnr\tssim\tmae\tfid"
        lines = [header]
        for name in list(BUCKET_NAMES) + list(AGGREGATES):
            row = self.rows[name]
            lines.append(
                f"{name}\t{row.count}\t{row.psnr:.4f}\t{row.ssim:.4f}"
                f"\t{row.mae:.4f}\t{row.fid:.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_keyvalues(self) -> str:
        lines = [
            f"protocol.k = {self.k}",
            f"protocol.composited = {self.composited}",
            f"protocol.embedding = {self.embedding_tag}",
            f"protocol.seed = {self.seed}",
        ]
        for name, row in self.rows.items():
            prefix = name.replace("%", "")
            lines.append(f"{prefix}.count = {row.count}")
            for metric in ("psnr", "ssim", "mae", "fid"):
                lines.append(f"{prefix}.{metric} = {getattr(row, metric):.6f}")
        return "\n".join(lines) + "\n"


def evaluate(
    model,
    pairs: Sequence[SamplePair],
    *,
    k: int = 1,
    composited: bool = True,
    embedding: StubEmbedding | None = None,
    seed: int = 0,
    progress: Callable[[int, int], None] | None = None,
) -> MetricReport:
    """Best-of-k protocol: draw k completions per pair, keep the highest-PSNR
    one, accumulate metrics per mask-ratio bucket plus aggregates. FID is
    computed between the real images and the selected completions."""
    if not pairs:
        raise ValueError("empty evaluation set")
    if getattr(model, "mode", "deterministic") == "deterministic" and k != 1:
        warnings.warn("deterministic model: forcing k=1", stacklevel=2)
        k = 1
    embedding = embedding or StubEmbedding()

    per_bucket: dict[int, dict[str, list]] = {
        i: {"psnr": [], "ssim": [], "mae": [], "real": [], "fake": []} for i in range(len(BUCKETS))
    }
    selections = []
    for index, pair in enumerate(pairs):
        bucket = bucket_of(mask_ratio(pair.mask))
        real_unit = to_unit(pair.image)
        best = None
        sample_seeds = [seed * 100_003 + index * 131 + j for j in range(k)]
        for j, sample_seed in enumerate(sample_seeds):
            out = model.inpaint(
                pair.image, pair.mask, seed=sample_seed, sample_index=j, composited=composited
            )
            out_unit = to_unit(out)
            score = psnr(real_unit, out_unit)
            if best is None or score > best[0]:
                best = (score, out_unit, sample_seed)
        score, out_unit, chosen_seed = best
        per_bucket[bucket]["psnr"].append(score)
        per_bucket[bucket]["ssim"].append(ssim(real_unit, out_unit))
        per_bucket[bucket]["mae"].append(mae(real_unit, out_unit))
        per_bucket[bucket]["real"].append(pair.image)
        per_bucket[bucket]["fake"].append(out_unit * 2.0 - 1.0)
        selections.append(
            {"name": pair.name or str(index), "bucket": bucket, "seed": chosen_seed, "psnr": score}
        )
        if progress:
            progress(index + 1, len(pairs))

    def summarize(indices: tuple[int, ...]) -> Row:
        scores = {m: [] for m in ("psnr", "ssim", "mae")}
        reals, fakes = [], []
        for i in indices:
            for m in scores:
                scores[m].extend(per_bucket[i][m])
            reals.extend(per_bucket[i]["real"])
            fakes.extend(per_bucket[i]["fake"])
        row = Row(count=len(reals))
        if not reals:
            return row
        row.psnr = float(np.mean(scores["psnr"]))
        row.ssim = float(np.mean(scores["ssim"]))
        row.mae = float(np.mean(scores["mae"]))
        if len(reals) >= 2:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # small buckets regularize quietly
                row.fid = fid(embedding(torch.stack(reals)), embedding(torch.stack(fakes)))
        return row

    rows = {name: summarize((i,)) for i, name in enumerate(BUCKET_NAMES)}
    for name, indices in AGGREGATES.items():
        rows[name] = summarize(indices)
    return MetricReport(
        rows=rows,
        k=k,
        composited=composited,
        embedding_tag=embedding.tag,
        seed=seed,
        selections=selections,
    )


# ---------------------------------------------------------------------------
# Prior visualization
# ---------------------------------------------------------------------------


def cluster_levels(
    pyramid: Sequence[torch.Tensor], k_clusters: int, seed: int = 0
) -> list[np.ndarray]:
    """K-Means labels per pyramid level, one HxW int raster each.

    Constant (or nearly so) feature maps yield fewer distinct points than
    clusters; those collapse to the number of distinct points instead of
    erroring, which callers can detect from the label range.
    """
    from sklearn.cluster import KMeans

    if k_clusters < 2:
        raise ValueError("need at least 2 clusters")
    rasters = []
    for level in pyramid:
        feat = level[0] if level.dim() == 4 else level
        c, h, w = feat.shape
        points = feat.detach().permute(1, 2, 0).reshape(-1, c).cpu().numpy().astype(np.float64)
        if points.shape[0] < k_clusters:
            raise ValueError(f"{points.shape[0]} pixels < {k_clusters} clusters")
        distinct = np.unique(points, axis=0).shape[0]
        k = min(k_clusters, distinct)
        if k == 1:
            rasters.append(np.zeros((h, w), dtype=np.int64))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=300, tol=1e-4,
                        random_state=seed)
            labels = km.fit_predict(points)
        rasters.append(labels.reshape(h, w).astype(np.int64))
    return rasters


_PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
        [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
        [210, 245, 60], [250, 190, 212], [0, 128, 128], [220, 190, 255],
        [170, 110, 40], [255, 250, 200], [128, 0, 0], [170, 255, 195],
    ],
    dtype=np.uint8,
)


def labels_to_rgb(labels: np.ndarray) -> np.ndarray:
    """Color-index a label raster for writing out as an image."""
    return _PALETTE[labels % len(_PALETTE)]
