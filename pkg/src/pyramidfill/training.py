"""Joint optimization of the prior learner and generator against the patch
discriminator: alternating updates, step learning-rate decay, loss reports.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .config import RunConfig
from .data import resize_mask
from .discriminator import PatchDiscriminator
from .losses import (
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    build_perceptual,
    feature_matching_perceptual_loss,
    kl_loss,
    perceptual_diversity_loss,
    prior_distillation_loss,
    reconstruction_loss,
    total_deterministic,
    total_probabilistic,
)
from .model import InpaintingModel
from .pretext import build_extractor, extract_targets
from .prior import sample_latent


@dataclass
class TrainConfig:
    mode: str = "deterministic"
    total_iters: int = 150000
    batch_size: int = 8
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    decay_frac: float = 0.75
    beta1: float = 0.0
    beta2: float = 0.9
    grad_clip: float = 10.0
    seed: int = 0
    ckpt_every: int = 1000

    def __post_init__(self):
        if not 0 < self.lr_final <= self.lr_initial:
            raise ValueError("require 0 < lr_final <= lr_initial")
        if not 0 <= self.decay_start < self.total_iters:
            raise ValueError("decay point must fall inside training")

    @property
    def decay_start(self) -> int:
        return int(self.decay_frac * self.total_iters)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "TrainConfig":
        return cls(
            mode=cfg["prior.mode"],
            total_iters=cfg["train.iters"],
            batch_size=cfg["train.batch_size"],
            lr_initial=cfg["train.lr_initial"],
            lr_final=cfg["train.lr_final"],
            decay_frac=cfg["train.decay_frac"],
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            grad_clip=cfg["train.grad_clip"],
            seed=cfg["train.seed"],
            ckpt_every=cfg["train.ckpt_every"],
        )


def lr_at(tc: TrainConfig, iteration: int) -> float:
    """Step decay: initial rate, dropping once at the decay point."""
    if not 0 <= iteration < tc.total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {tc.total_iters})")
    return tc.lr_initial if iteration < tc.decay_start else tc.lr_final


@dataclass
class TrainState:
    model: InpaintingModel
    disc: PatchDiscriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    pretext: torch.nn.Module
    perceptual: torch.nn.Module | None
    cfg: RunConfig
    tc: TrainConfig
    weights: LossWeights
    iteration: int = 0
    adv_form: str = "paper"
    history: list[dict] = field(default_factory=list)


def build_train_state(cfg: RunConfig) -> TrainState:
    cfg.validate()
    tc = TrainConfig.from_config(cfg)
    torch.manual_seed(tc.seed)
    pretext = build_extractor(
        cfg["pretext.kind"],
        cfg["model.levels"],
        stub_channels=cfg["pretext.stub_channels"],
        seed=cfg["pretext.seed"],
        weights=cfg["pretext.weights"],
        arch=cfg["pretext.arch"],
        stages=cfg["pretext.stages"],
    )
    model = InpaintingModel(cfg, pretext.out_channels)
    disc = PatchDiscriminator(cfg["adv.channels"], taps=cfg["adv.taps"])
    perceptual = None
    if tc.mode == "probabilistic":
        perceptual = build_perceptual(
            cfg["perceptual.kind"],
            seed=cfg["perceptual.seed"],
            weights=cfg["perceptual.weights"],
        )
    betas = (tc.beta1, tc.beta2)
    opt_g = torch.optim.Adam(model.parameters(), lr=tc.lr_initial, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=tc.lr_initial, betas=betas)
    return TrainState(
        model=model,
        disc=disc,
        opt_g=opt_g,
        opt_d=opt_d,
        pretext=pretext,
        perceptual=perceptual,
        cfg=cfg,
        tc=tc,
        weights=LossWeights.from_config(cfg),
        adv_form=cfg["adv.loss_form"],
    )


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _clip(params, max_norm: float) -> None:
    if max_norm > 0:
        torch.nn.utils.clip_grad_norm_(params, max_norm)


def train_step(state: TrainState, images: torch.Tensor, masks: torch.Tensor) -> dict:
    """One alternating update: discriminator first, then the generator side.

    The generated batch is built once with gradients; the discriminator step
    sees it detached, and its post-update verdict drives the generator loss.
    In probabilistic mode two latents are drawn: the first feeds every term,
    the pair feeds the diversity term.
    """
    model, disc, w = state.model, state.disc, state.weights
    prob = state.tc.mode == "probabilistic"
    lr = lr_at(state.tc, state.iteration)
    _set_lr(state.opt_g, lr)
    _set_lr(state.opt_d, lr)

    model.check_input(images, masks)
    masked = images * (1.0 - masks)
    targets = extract_targets(state.pretext, images, model.levels)

    prior = model.prior
    enc = prior.encode(masked, masks)
    mu = logvar = fake2 = None
    if prob:
        mu, logvar = prior.latent_stats(enc[-1])
        top1 = prior.top_from_latent(sample_latent(mu, logvar), enc[-1])
        top2 = prior.top_from_latent(sample_latent(mu, logvar), enc[-1])
    else:
        top1 = prior.top_deterministic(enc[-1])
        top2 = None
    pyramid = prior.refine_down(top1, enc)
    feat = model.generator.encode_image(masked, masks)
    fake = model.generator.decode(feat, pyramid)
    if top2 is not None:
        fake2 = model.generator.decode(feat, prior.refine_down(top2, enc))

    # -- discriminator update ----------------------------------------------
    real_patch, _ = disc(images)
    fake_patch_det, _ = disc(fake.detach())
    d_loss = adversarial_d_loss(real_patch, fake_patch_det, state.adv_form)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    _clip(disc.parameters(), state.tc.grad_clip)
    state.opt_d.step()

    # -- generator-side update ---------------------------------------------
    fake_patch, fake_taps = disc(fake)
    level_masks = [resize_mask(masks, l) for l in range(1, model.levels + 1)]
    l_prior = prior_distillation_loss(targets, prior.project(pyramid), level_masks, w.alpha)
    l_img = reconstruction_loss(images, fake, masks, w.delta)
    l_adv = adversarial_g_loss(fake_patch, state.adv_form)
    total = total_deterministic(l_prior, l_img, l_adv, w)
    report = {
        "prior": float(l_prior.detach()),
        "img": float(l_img.detach()),
        "adv": float(l_adv.detach()),
        "adv_d": float(d_loss.detach()),
    }

    if prob:
        with torch.no_grad():
            _, real_taps = disc(images)
            perc_real = [f.detach() for f in state.perceptual(images)]
        perc_fake = state.perceptual(fake)
        perc_fake2 = state.perceptual(fake2)
        l_feature = feature_matching_perceptual_loss(real_taps, fake_taps, perc_real, perc_fake)
        l_diverse = perceptual_diversity_loss(perc_fake, perc_fake2, masks, w.epsilon)
        l_kl = kl_loss(mu, logvar)
        total = total_probabilistic(total, l_feature, l_diverse, l_kl, w)
        report.update(
            feature=float(l_feature.detach()),
            diverse=float(l_diverse.detach()),
            kl=float(l_kl.detach()),
        )
    report["total"] = float(total.detach())

    bad = {k: v for k, v in report.items() if not math.isfinite(v)}
    if bad:
        raise RuntimeError(f"non-finite losses at iteration {state.iteration}: {report}")

    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    _clip(model.parameters(), state.tc.grad_clip)
    state.opt_g.step()

    state.iteration += 1
    return report


def fit(
    state: TrainState,
    batches,
    *,
    ckpt_dir: str | Path | None = None,
    log_every: int = 100,
    log=print,
) -> None:
    """Drive ``train_step`` over an iterable of (images, masks) batches."""
    curve_path = Path(ckpt_dir) / "losses.tsv" if ckpt_dir else None
    if curve_path:
        curve_path.parent.mkdir(parents=True, exist_ok=True)
    started = time.time()
    for images, masks in batches:
        report = train_step(state, images, masks)
        state.history.append(report)
        if curve_path:
            if state.iteration == 1 or not curve_path.exists():
                curve_path.write_text("iter\t" + "\t".join(sorted(report)) + "\n")
            with curve_path.open("a") as fh:
                fh.write(
                    f"{state.iteration}\t"
                    + "\t".join(f"{report[k]:.6f}" for k in sorted(report))
                    + "\n"
                )
        if log and state.iteration % log_every == 0:
            rate = state.iteration / max(time.time() - started, 1e-9)
            terms = " ".join(f"{k}={v:.4f}" for k, v in sorted(report.items()))
            log(f"[{state.iteration}/{state.tc.total_iters}] {terms} ({rate:.2f} it/s)")
        if ckpt_dir and state.iteration % state.tc.ckpt_every == 0:
            ckpt.save_checkpoint(ckpt_dir, state)
        if state.iteration >= state.tc.total_iters:
            break
    if ckpt_dir:
        ckpt.save_checkpoint(ckpt_dir, state)


def resume(ckpt_dir: str | Path) -> TrainState:
    """Rebuild a TrainState from a full (non-export) checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta = ckpt.read_meta(ckpt_dir)
    if meta.get("inference"):
        raise ValueError("inference exports cannot resume training")
    cfg = RunConfig.from_text((ckpt_dir / "config").read_text())
    state = build_train_state(cfg)
    ckpt.load_module(ckpt_dir / "params" / "prior.bin", state.model.prior)
    ckpt.load_module(ckpt_dir / "params" / "gen.bin", state.model.generator)
    ckpt.load_module(ckpt_dir / "params" / "disc.bin", state.disc)
    ckpt.load_optimizer(ckpt_dir / "optim" / "gen_side.bin", state.opt_g)
    ckpt.load_optimizer(ckpt_dir / "optim" / "disc.bin", state.opt_d)
    state.iteration = meta["iteration"]
    return state
