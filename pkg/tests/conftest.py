"""Shared fixtures. Desk-scale trainings are cached under .cache/ keyed by
their effective config, so the first run pays the training cost and later
runs only reload and re-verify the metrics."""

from __future__ import annotations

import hashlib
from pathlib import Path

import pytest
import torch

from pyramidfill.config import RunConfig
from pyramidfill.data import synthetic_batch
from pyramidfill import training
from pyramidfill.checkpoint import read_meta

CACHE = Path(__file__).resolve().parent.parent / ".cache"


def tiny_config(mode: str = "deterministic", size: int = 32, iters: int = 10) -> RunConfig:
    """Smallest legal model; for fast functional tests only."""
    cfg = RunConfig()
    cfg.update(
        {
            "model.image_size": size,
            "prior.channels": (8, 16, 32),
            "prior.latent_dim": 16,
            "prior.mode": mode,
            "prior.top_blocks": 2,
            "gen.channels": (8, 16, 32),
            "gen.bottom_blocks": 2,
            "gen.spade_hidden": 16,
            "adv.channels": (8, 16, 32, 64, 64),
            "pretext.stub_channels": (4, 8, 16),
            "train.iters": iters,
            "train.batch_size": 2,
            "eval.embed_dim": 8,
        }
    )
    cfg.validate()
    return cfg


def desk_config(mode: str) -> RunConfig:
    cfg = RunConfig()
    cfg.apply_preset("desk")
    cfg.set("prior.mode", mode)
    cfg.set("train.seed", 7)
    cfg.validate()
    return cfg


def _cached_run(cfg: RunConfig, tag: str, batches_fn) -> Path:
    key = hashlib.sha256(cfg.to_text().encode()).hexdigest()[:12]
    ckpt_dir = CACHE / f"{tag}-{key}"
    done = False
    if (ckpt_dir / "meta").exists():
        try:
            done = read_meta(ckpt_dir)["iteration"] >= cfg["train.iters"]
        except ValueError:
            done = False
    if not done:
        state = training.build_train_state(cfg)
        training.fit(state, batches_fn(state), ckpt_dir=ckpt_dir, log_every=200)
    return ckpt_dir


def desk_checkpoint(mode: str) -> Path:
    """Train (or reload) the 2000-iteration desk model for ``mode``."""
    cfg = desk_config(mode)

    def batches(state):
        from pyramidfill.data import PairSource

        source = PairSource(synthetic=256, size=64, seed=cfg["train.seed"])
        return source.batches(state.tc.batch_size, state.tc.total_iters - state.iteration)

    return _cached_run(cfg, f"desk-{mode[:4]}", batches)


OVERFIT_SEEDS = tuple(range(100, 108))


def overfit_checkpoint() -> Path:
    """500 iterations on one fixed 8-image batch (deterministic mode)."""
    cfg = desk_config("deterministic")
    cfg.set("train.iters", 500)
    cfg.set("train.ckpt_every", 500)

    def batches(state):
        images, masks = synthetic_batch(OVERFIT_SEEDS, size=64)
        remaining = state.tc.total_iters - state.iteration
        return ((images, masks) for _ in range(remaining))

    return _cached_run(cfg, "overfit", batches)


def held_out_pairs(n: int = 64, size: int = 64):
    """Evaluation pairs from a seed range disjoint from every training run."""
    from pyramidfill.data import make_synthetic_pair

    return [make_synthetic_pair(10_000_000 + i, size) for i in range(n)]


@pytest.fixture(scope="session")
def desk_det_ckpt() -> Path:
    return desk_checkpoint("deterministic")


@pytest.fixture(scope="session")
def desk_prob_ckpt() -> Path:
    return desk_checkpoint("probabilistic")


@pytest.fixture(scope="session")
def overfit_ckpt() -> Path:
    return overfit_checkpoint()


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def pytest_runtest_logreport(report):
    # surface one visible line per acceptance criterion in the run log
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"\n[ACCEPTANCE] {status}: {name}", flush=True)
