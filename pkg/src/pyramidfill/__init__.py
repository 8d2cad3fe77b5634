"""Image inpainting driven by a learned multi-scale semantic prior pyramid."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig  # noqa: E402
from .data import SamplePair, bucket_of, composite, make_synthetic_pair, mask_ratio  # noqa: E402
from .model import InpaintingModel  # noqa: E402

__all__ = [
    "ConfigError",
    "RunConfig",
    "SamplePair",
    "InpaintingModel",
    "bucket_of",
    "composite",
    "make_synthetic_pair",
    "mask_ratio",
    "__version__",
]
