"""HTTP inference service: base64-PNG in, base64-PNG completions out.

Weights are immutable once loaded, so requests are handled concurrently
against read-only state. Every sample's latent stream is derived from
(seed, sample index) alone, making any returned image reproducible by
resubmitting its echoed seed.
"""

from __future__ import annotations

import base64
import hashlib
import io
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from . import __version__
from .checkpoint import load_for_inference
from .data import from_uint8, to_uint8

MAX_PAYLOAD = 16 * 1024 * 1024  # decoded-bytes budget per request
HARD_SAMPLE_CAP = 16


class InpaintRequest(BaseModel):
    image: str  # base64 PNG, RGB
    mask: str  # base64 PNG, grayscale; >= 128 marks missing pixels
    samples: int = 1
    seed: int | None = None
    composited: bool = True


class ServiceState:
    def __init__(self):
        self.model = None
        self.cfg = None
        self.checkpoint_hash = ""

    def load(self, ckpt_dir: str | Path) -> None:
        self.model, self.cfg, _ = load_for_inference(ckpt_dir)
        digest = hashlib.sha256()
        params = Path(ckpt_dir) / "params"
        for path in sorted(params.glob("*.bin")):
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
        self.checkpoint_hash = digest.hexdigest()[:16]


def _decode_png(b64: str, *, what: str) -> Image.Image:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception:
        raise HTTPException(400, f"{what}: invalid base64")
    if len(raw) > MAX_PAYLOAD:
        raise HTTPException(413, f"{what}: payload exceeds {MAX_PAYLOAD} bytes")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception:
        raise HTTPException(400, f"{what}: not a decodable image")
    return img


def _encode_png(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _sample_seed(base: int, index: int) -> int:
    # stable, platform-independent derivation for the echoed per-sample seeds
    h = hashlib.sha256(f"{base}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "little") % (1 << 31)


def create_app(
    checkpoint: str | Path | None = None,
    *,
    frontend: str | Path | None = None,
    max_samples: int = HARD_SAMPLE_CAP,
) -> FastAPI:
    app = FastAPI(title="pyramidfill", version=__version__)
    state = ServiceState()
    app.state.service = state
    sample_cap = max(1, min(max_samples, HARD_SAMPLE_CAP))

    if checkpoint:
        state.load(checkpoint)

    def require_model():
        if state.model is None:
            raise HTTPException(503, "no checkpoint loaded")
        return state.model

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/model-info")
    def model_info():
        model = require_model()
        return {
            "mode": model.mode,
            "levels": model.levels,
            "size_multiple": 2 ** (model.levels - 1),
            "trained_size": model.image_size,
            "checkpoint": state.checkpoint_hash,
            "version": __version__,
        }

    @app.post("/inpaint")
    def inpaint(req: InpaintRequest):
        model = require_model()
        if not 1 <= req.samples <= sample_cap:
            raise HTTPException(400, f"samples must be in 1..{sample_cap}")
        image_png = _decode_png(req.image, what="image").convert("RGB")
        mask_png = _decode_png(req.mask, what="mask").convert("L")
        if image_png.size != mask_png.size:
            raise HTTPException(
                400, f"image {image_png.size} and mask {mask_png.size} sizes differ"
            )
        w, h = image_png.size
        step = 2 ** (model.levels - 1)
        if w % step or h % step:
            raise HTTPException(400, f"image size must be a multiple of {step}, got {w}x{h}")

        image = from_uint8(np.asarray(image_png))
        mask = torch.from_numpy((np.asarray(mask_png) >= 128).astype(np.float32))[None]

        warning = None
        samples = req.samples
        if model.mode == "deterministic" and samples > 1:
            samples = 1
            warning = "deterministic model: returning a single image"

        base_seed = req.seed if req.seed is not None else int.from_bytes(
            np.random.default_rng().bytes(4), "little"
        )
        # sample 0 uses the base seed itself so an echoed seed resubmitted
        # with samples=1 reproduces its image exactly
        seeds = [base_seed if j == 0 else _sample_seed(base_seed, j) for j in range(samples)]
        images_out = []
        for sample_seed in seeds:
            out = model.inpaint(
                image, mask, seed=sample_seed, sample_index=0, composited=req.composited
            )
            images_out.append(_encode_png(to_uint8(out)))

        body = {
            "images": images_out,
            "seeds": seeds,
            "model_info": {"checkpoint": state.checkpoint_hash, "mode": model.mode},
        }
        if warning:
            body["warning"] = warning
            return JSONResponse(body, status_code=200)
        return body

    if frontend:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend), html=True), name="frontend")

    return app
