"""Versioned checkpoint directories with a deterministic tensor container.

Layout:

    <dir>/
      params/prior.bin  params/gen.bin  params/disc.bin
      optim/gen_side.bin  optim/disc.bin
      config   -- effective RunConfig, line-oriented text
      meta     -- iteration / format version / export flag

The container stores named arrays sorted by name with exact little-endian
bytes, so save -> load -> save is byte-identical. Inference exports carry
only the two generator-side parameter files, with distillation heads
stripped.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"PFPK"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": 0,
    "float64": 1,
    "int64": 2,
    "uint8": 3,
    "int32": 4,
    "bool": 5,
    "bytes": 255,
}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}


def write_pack(path: str | Path, entries: dict[str, np.ndarray | bytes]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
    for name in sorted(entries):
        value = entries[name]
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        if isinstance(value, bytes):
            buf.write(struct.pack("<BB", _DTYPES["bytes"], 0))
            buf.write(struct.pack("<Q", len(value)))
            buf.write(value)
            continue
        # ascontiguousarray promotes 0-dim to 1-dim; keep the stated shape
        arr = np.ascontiguousarray(value).reshape(np.shape(value))
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype} for entry {name}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        buf.write(struct.pack("<BB", _DTYPES[arr.dtype.name], arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        raw = arr.tobytes()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    Path(path).write_bytes(buf.getvalue())


def read_pack(path: str | Path) -> dict[str, np.ndarray | bytes]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    if view[:4] != MAGIC:
        raise ValueError(f"{path}: not a parameter pack")
    version, count = struct.unpack_from("<II", view, 4)
    if version != FORMAT_VERSION:
        raise ValueError(
            f"{path}: pack format v{version}, this build reads v{FORMAT_VERSION}; migrate first"
        )
    offset = 12
    out: dict[str, np.ndarray | bytes] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", view, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}I", view, offset) if ndim else ()
        offset += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", view, offset)
        offset += 8
        raw = bytes(view[offset : offset + nbytes])
        offset += nbytes
        if code == _DTYPES["bytes"]:
            out[name] = raw
        else:
            arr = np.frombuffer(raw, dtype=np.dtype(_DTYPE_NAMES[code]).newbyteorder("<"))
            out[name] = arr.reshape(shape).copy()
    return out


# ---------------------------------------------------------------------------
# Module/optimizer (de)serialization
# ---------------------------------------------------------------------------


def _state_to_entries(state: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state.items()}


def save_module(path: str | Path, module: torch.nn.Module, *, drop_prefixes: tuple[str, ...] = ()) -> None:
    state = module.state_dict()
    if drop_prefixes:
        state = {
            k: v for k, v in state.items() if not any(k.startswith(p) for p in drop_prefixes)
        }
    write_pack(path, _state_to_entries(state))


def load_module(path: str | Path, module: torch.nn.Module) -> None:
    """Validate names and shapes against the module before loading."""
    entries = read_pack(path)
    target = module.state_dict()
    problems = []
    for key in entries:
        if key not in target:
            problems.append(f"unexpected entry {key}")
        elif tuple(target[key].shape) != tuple(entries[key].shape):
            problems.append(
                f"{key}: stored {tuple(entries[key].shape)}, model wants {tuple(target[key].shape)}"
            )
    for key in target:
        if key not in entries:
            problems.append(f"missing entry {key}")
    if problems:
        raise ValueError(f"{path} does not match the model: " + "; ".join(sorted(problems)))
    state = {}
    for key, arr in entries.items():
        if isinstance(arr, bytes):
            raise ValueError(f"{path}: entry {key} is not a tensor")
        state[key] = torch.from_numpy(arr.copy()).to(target[key].dtype)
    module.load_state_dict(state)


def save_optimizer(path: str | Path, optimizer: torch.optim.Optimizer) -> None:
    sd = optimizer.state_dict()
    entries: dict[str, np.ndarray | bytes] = {
        "param_groups.json": json.dumps(sd["param_groups"], sort_keys=True).encode()
    }
    for idx, slots in sd["state"].items():
        for slot, value in slots.items():
            if not torch.is_tensor(value):
                value = torch.tensor(value)
            entries[f"{idx}/{slot}"] = value.detach().cpu().numpy()
    write_pack(path, entries)


def load_optimizer(path: str | Path, optimizer: torch.optim.Optimizer) -> None:
    entries = read_pack(path)
    groups_raw = entries.pop("param_groups.json", None)
    if not isinstance(groups_raw, bytes):
        raise ValueError(f"{path}: optimizer pack lacks param groups")
    state: dict[int, dict[str, torch.Tensor]] = {}
    for name, arr in entries.items():
        idx_text, _, slot = name.partition("/")
        state.setdefault(int(idx_text), {})[slot] = torch.from_numpy(np.asarray(arr).copy())
    optimizer.load_state_dict({"state": state, "param_groups": json.loads(groups_raw)})


# ---------------------------------------------------------------------------
# Checkpoint directories
# ---------------------------------------------------------------------------

_META_VERSION = 1


def _write_meta(path: Path, iteration: int, *, inference: bool) -> None:
    path.write_text(
        f"version = {_META_VERSION}\niteration = {iteration}\ninference = {int(inference)}\n"
    )


def read_meta(ckpt_dir: str | Path) -> dict[str, int]:
    meta: dict[str, int] = {}
    for line in (Path(ckpt_dir) / "meta").read_text().splitlines():
        key, _, value = line.partition("=")
        if key.strip():
            meta[key.strip()] = int(value.strip())
    if meta.get("version") != _META_VERSION:
        raise ValueError(
            f"checkpoint version {meta.get('version')} unsupported (this build: {_META_VERSION})"
        )
    return meta


def save_checkpoint(ckpt_dir: str | Path, state) -> None:
    """Full training snapshot; ``state`` is a training.TrainState."""
    ckpt_dir = Path(ckpt_dir)
    (ckpt_dir / "params").mkdir(parents=True, exist_ok=True)
    (ckpt_dir / "optim").mkdir(parents=True, exist_ok=True)
    save_module(ckpt_dir / "params" / "prior.bin", state.model.prior)
    save_module(ckpt_dir / "params" / "gen.bin", state.model.generator)
    save_module(ckpt_dir / "params" / "disc.bin", state.disc)
    save_optimizer(ckpt_dir / "optim" / "gen_side.bin", state.opt_g)
    save_optimizer(ckpt_dir / "optim" / "disc.bin", state.opt_d)
    (ckpt_dir / "config").write_text(state.cfg.to_text())
    _write_meta(ckpt_dir / "meta", state.iteration, inference=False)


def export_inference(ckpt_dir: str | Path, out_dir: str | Path) -> None:
    """Strip training-only parts: distillation heads and the adversary."""
    from .config import RunConfig

    ckpt_dir, out_dir = Path(ckpt_dir), Path(out_dir)
    meta = read_meta(ckpt_dir)
    cfg = RunConfig.from_text((ckpt_dir / "config").read_text())
    model = build_model_for_checkpoint(cfg)
    load_module(ckpt_dir / "params" / "prior.bin", model.prior)
    (out_dir / "params").mkdir(parents=True, exist_ok=True)
    save_module(out_dir / "params" / "prior.bin", model.prior, drop_prefixes=("heads.",))
    (out_dir / "params" / "gen.bin").write_bytes((ckpt_dir / "params" / "gen.bin").read_bytes())
    (out_dir / "config").write_text(cfg.to_text())
    _write_meta(out_dir / "meta", meta["iteration"], inference=True)


def build_model_for_checkpoint(cfg):
    """Model with head widths reconstructed from the recorded config."""
    from .model import InpaintingModel
    from .pretext import build_extractor

    extractor = build_extractor(
        cfg["pretext.kind"],
        cfg["model.levels"],
        stub_channels=cfg["pretext.stub_channels"],
        seed=cfg["pretext.seed"],
        weights=cfg["pretext.weights"],
        arch=cfg["pretext.arch"],
        stages=cfg["pretext.stages"],
    )
    return InpaintingModel(cfg, extractor.out_channels)


def load_for_inference(ckpt_dir: str | Path):
    """Model ready for ``inpaint``; accepts both full and exported dirs."""
    from .config import RunConfig
    from .model import InpaintingModel

    ckpt_dir = Path(ckpt_dir)
    meta = read_meta(ckpt_dir)
    cfg = RunConfig.from_text((ckpt_dir / "config").read_text())
    if meta.get("inference"):
        model = InpaintingModel(cfg, target_channels=None)
        load_module(ckpt_dir / "params" / "prior.bin", model.prior)
    else:
        model = build_model_for_checkpoint(cfg)
        load_module(ckpt_dir / "params" / "prior.bin", model.prior)
    load_module(ckpt_dir / "params" / "gen.bin", model.generator)
    model.eval()
    return model, cfg, meta
