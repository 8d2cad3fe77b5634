"""Run configuration: one flat table of dotted keys with typed defaults.

Precedence: defaults < config file < command-line flags. Unknown keys are
rejected everywhere so a typo never silently falls back to a default. The
effective configuration serializes to line-oriented ``key = value`` text and
is embedded into checkpoints and evaluation reports.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (default, parser, help)
DEFAULTS: dict[str, tuple[Any, Any, str]] = {
    "model.levels": (3, int, "number of pyramid levels L"),
    "model.image_size": (256, int, "native training image size (square)"),
    "prior.channels": ((64, 128, 256), _int_list, "prior-learner widths per level"),
    "prior.latent_dim": (256, int, "latent code dimension for the variational module"),
    "prior.mode": ("deterministic", str, "deterministic | probabilistic"),
    "prior.gv_uses_context": (False, _bool, "latent decoder also sees top context features"),
    "prior.top_blocks": (4, int, "residual blocks applied at the coarsest level"),
    "prior.rdb_layers": (4, int, "dense layers inside the residual dense block"),
    "prior.rdb_growth": (32, int, "growth width of the residual dense block"),
    "gen.channels": ((64, 128, 256), _int_list, "generator widths per level"),
    "gen.bottom_blocks": (8, int, "modulated residual blocks at the coarsest level"),
    "gen.spade_hidden": (128, int, "hidden width of the modulation heads"),
    "adv.channels": ((64, 128, 256, 512, 512), _int_list, "discriminator stage widths"),
    "adv.loss_form": ("paper", str, "adversarial loss form: paper | nonsaturating"),
    "adv.taps": (4, int, "number of discriminator feature taps"),
    "loss.alpha": (3.0, float, "mask emphasis in the prior distillation loss"),
    "loss.delta": (4.0, float, "mask emphasis in the reconstruction loss"),
    "loss.lambda1": (10.0, float, "reconstruction weight"),
    "loss.lambda2": (1.0, float, "adversarial weight"),
    "loss.lambda3": (10.0, float, "feature-matching + perceptual weight"),
    "loss.lambda4": (1.0, float, "diversity weight"),
    "loss.lambda5": (0.05, float, "KL weight"),
    "loss.epsilon": (1e-5, float, "perturbation in the diversity denominator"),
    "pretext.kind": ("stub", str, "stub | edge | classification | detection | segmentation"),
    "pretext.weights": ("", str, "checkpoint path for backbone extractors"),
    "pretext.arch": ("", str, "override backbone architecture name"),
    "pretext.stages": ((0, 1, 2), _int_list, "backbone stages tapped for targets"),
    "pretext.seed": (0, int, "seed for the stub extractor"),
    "pretext.stub_channels": ((32, 64, 128), _int_list, "stub extractor channel widths"),
    "perceptual.kind": ("stub", str, "stub | vgg19"),
    "perceptual.weights": ("", str, "checkpoint path for the vgg19 extractor"),
    "perceptual.seed": (0, int, "seed for the stub perceptual extractor"),
    "train.iters": (150000, int, "total training iterations"),
    "train.batch_size": (8, int, "batch size"),
    "train.lr_initial": (1e-4, float, "initial learning rate"),
    "train.lr_final": (1e-5, float, "learning rate after the decay point"),
    "train.decay_frac": (0.75, float, "fraction of training before the lr decay"),
    "train.beta1": (0.0, float, "Adam beta1"),
    "train.beta2": (0.9, float, "Adam beta2"),
    "train.grad_clip": (10.0, float, "global gradient-norm clip (0 disables)"),
    "train.seed": (0, int, "training seed"),
    "train.ckpt_every": (1000, int, "checkpoint interval in iterations"),
    "eval.k": (5, int, "samples per image for probabilistic evaluation"),
    "eval.composited": (True, _bool, "compute metrics on composited outputs"),
    "eval.embed_dim": (16, int, "embedding dimension of the stub FID network"),
    "eval.embed_seed": (0, int, "seed for the stub FID network"),
    "eval.seed": (0, int, "seed for mask-image pairing and latent draws"),
    "serve.port": (8765, int, "HTTP service port"),
    "serve.host": ("127.0.0.1", str, "HTTP service bind address"),
    "serve.checkpoint": ("", str, "checkpoint directory served for inference"),
    "serve.max_samples": (16, int, "per-request sample cap"),
    "serve.frontend": ("", str, "optional static directory mounted at /"),
}

_MODE_ALIASES = {
    "det": "deterministic",
    "deterministic": "deterministic",
    "prob": "probabilistic",
    "probabilistic": "probabilistic",
}


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values, or inconsistent settings."""


class RunConfig:
    """Immutable-ish view over the merged configuration mapping."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {key: default for key, (default, _, _) in DEFAULTS.items()}
        if values:
            for key, value in values.items():
                self.set(key, value)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key: {key}")
        _, parser, _ = DEFAULTS[key]
        if isinstance(value, str) and parser is not str:
            value = parser(value)
        if key == "prior.mode":
            try:
                value = _MODE_ALIASES[str(value)]
            except KeyError:
                raise ConfigError(f"prior.mode must be deterministic or probabilistic, got {value!r}")
        self._values[key] = value

    def get(self, key: str) -> Any:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key: {key}")
        return self._values[key]

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def update_from_file(self, path: str | Path) -> None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            try:
                self.set(key.strip(), value.strip())
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key.strip()}: {exc}")

    def update(self, overrides: dict[str, Any]) -> None:
        for key, value in overrides.items():
            self.set(key, value)

    def to_text(self) -> str:
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            cfg.set(key.strip(), value.strip())
        return cfg

    def validate(self) -> None:
        levels = self.get("model.levels")
        if levels < 1:
            raise ConfigError("model.levels must be >= 1")
        size = self.get("model.image_size")
        if size % (2 ** (levels - 1)) != 0:
            raise ConfigError(
                f"model.image_size {size} is not divisible by 2^(levels-1) = {2 ** (levels - 1)}"
            )
        for key in ("prior.channels", "gen.channels"):
            if len(self.get(key)) != levels:
                raise ConfigError(f"{key} must list exactly {levels} widths")
        for width in self.get("prior.channels")[1:]:
            if width % 4 != 0:
                raise ConfigError("prior.channels above level 1 must be divisible by 4 (pixel shuffle)")
        if not (0 < self.get("train.lr_final") <= self.get("train.lr_initial")):
            raise ConfigError("require 0 < train.lr_final <= train.lr_initial")
        if not (0.0 < self.get("train.decay_frac") < 1.0):
            raise ConfigError("train.decay_frac must be in (0, 1)")
        if self.get("loss.epsilon") <= 0:
            raise ConfigError("loss.epsilon must be positive")
        if self.get("adv.loss_form") not in ("paper", "nonsaturating"):
            raise ConfigError("adv.loss_form must be 'paper' or 'nonsaturating'")

    def apply_preset(self, name: str) -> None:
        if name == "desk":
            self.update(
                {
                    "model.image_size": 64,
                    "model.levels": 3,
                    "prior.channels": (32, 64, 128),
                    "prior.latent_dim": 128,
                    "gen.channels": (32, 64, 128),
                    "gen.spade_hidden": 64,
                    "adv.channels": (32, 64, 128, 256, 256),
                    "train.iters": 2000,
                    "eval.embed_dim": 16,
                }
            )
        elif name:
            raise ConfigError(f"unknown preset: {name}")

    def snapshot(self) -> dict[str, Any]:
        return dict(self._values)
