"""Flat key-value run configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, keys may be
dotted (``curriculum.s0``). Later sources win: preset < file < overrides.

Key schema (all optional unless a builder requires them):

  task                        toy2d | phantom64 | image32
  total_steps batch_size learning_rate optimizer seed checkpoint_every
  grid                        sinusoidal | karras
  level_sampler               beta | lognormal
  weighting                   gap | uniform
  grad_clip sigma_data huber.c ema.mu
  curriculum.kind curriculum.s0 curriculum.s1 curriculum.monotone_clip
  lognormal.p_mean lognormal.p_std
  beta.alpha beta.beta
  injection.ratio injection.low injection.high
  sigma.min sigma.max sigma.rho
  model.kind                  mlp | unet | cond_unet
  model.hidden model.base_channels model.res_blocks
  model.channel_multipliers   comma list, e.g. 1,2,2
  model.attention             comma list of resolutions, empty to disable
  wag.w
  data.kind                   gauss2d | phantom | image_dir
  data.n data.modes data.size data.sigma_dose data.ellipses data.dir
  eval.samples eval.projections
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

from .consistency import BoundaryScalings, EmaConfig
from .curriculum import CurriculumConfig
from .network import NetConfig, WagConfig, build_conditional_unet, build_mlp, build_unet
from .schedules import BetaParams, HighNoiseInjection, LognormalParams, NoiseRange
from .train import TrainConfig

_KEY_RE = re.compile(r"^[A-Za-z0-9_.]+$")

# The full schema from the module docstring, plus data.channels which the
# trainer records into checkpoint metadata for model rebuilds.
KNOWN_KEYS = frozenset({
    "task", "total_steps", "batch_size", "learning_rate", "optimizer",
    "seed", "checkpoint_every", "grid", "level_sampler", "weighting",
    "grad_clip", "sigma_data", "huber.c", "ema.mu",
    "curriculum.kind", "curriculum.s0", "curriculum.s1", "curriculum.monotone_clip",
    "lognormal.p_mean", "lognormal.p_std", "beta.alpha", "beta.beta",
    "injection.ratio", "injection.low", "injection.high",
    "sigma.min", "sigma.max", "sigma.rho",
    "model.kind", "model.hidden", "model.base_channels", "model.res_blocks",
    "model.channel_multipliers", "model.attention", "wag.w",
    "data.kind", "data.n", "data.modes", "data.size", "data.sigma_dose",
    "data.ellipses", "data.dir", "data.channels",
    "eval.samples", "eval.projections",
})


class ConfigError(ValueError):
    pass


def unknown_keys(cfg: "Config") -> list[str]:
    """Keys outside the documented schema; typos would otherwise be silent."""
    return sorted(k for k in cfg.values if k not in KNOWN_KEYS)


class Config:
    """Immutable-ish view over a flat string->string mapping with typed getters."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values: dict[str, str] = dict(values or {})

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Config":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = line.split("=", 1)
            key = key.strip()
            if not _KEY_RE.match(key):
                raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
            values[key] = val.strip()
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "Config":
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        return cls.from_text(text, source=str(path))

    def merged(self, other: "Config | dict[str, str]") -> "Config":
        values = dict(self.values)
        values.update(other.values if isinstance(other, Config) else other)
        return Config(values)

    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    # typed getters ---------------------------------------------------------
    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"missing required config key {key!r}")
        return self.values[key]

    def _typed(self, key, default, conv, typename):
        if key not in self.values:
            return default
        try:
            return conv(self.values[key])
        except ValueError as e:
            raise ConfigError(f"config key {key} = {self.values[key]!r} is not {typename}") from e

    def get_int(self, key: str, default: int | None = None) -> int:
        return self._typed(key, default, int, "an integer")

    def get_float(self, key: str, default: float | None = None) -> float:
        return self._typed(key, default, float, "a number")

    def get_bool(self, key: str, default: bool = False) -> bool:
        def conv(s: str) -> bool:
            t = s.lower()
            if t in ("1", "true", "yes", "on"):
                return True
            if t in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)

        return self._typed(key, default, conv, "a boolean")

    def get_ints(self, key: str, default: tuple = ()) -> tuple:
        def conv(s: str) -> tuple:
            s = s.strip()
            return tuple(int(t) for t in s.split(",") if t.strip()) if s else ()

        return self._typed(key, default, conv, "a comma list of integers")


PRESETS: dict[str, dict[str, str]] = {
    # Tuned so single-step samples land within 2x the train-vs-holdout
    # sliced-Wasserstein baseline in one desk-scale run.
    "toy2d": {
        "task": "toy2d",
        "total_steps": "20000",
        "batch_size": "256",
        "learning_rate": "3e-4",
        "grad_clip": "1",
        "optimizer": "rectified-adam",
        "grid": "karras",
        "level_sampler": "beta",
        "curriculum.kind": "sinusoidal",
        "curriculum.s0": "20",
        "curriculum.s1": "150",
        "injection.ratio": "0.01",
        "huber.c": "0.03",
        "model.kind": "mlp",
        "model.hidden": "128,128,128",
        "data.kind": "gauss2d",
        "data.n": "65536",
        "data.modes": "8",
        "eval.samples": "2048",
        "eval.projections": "256",
        "seed": "0",
    },
    "phantom64": {
        "task": "phantom64",
        "total_steps": "4500",
        "batch_size": "4",
        "learning_rate": "4e-4",
        "optimizer": "rectified-adam",
        "grid": "sinusoidal",
        "level_sampler": "beta",
        "curriculum.kind": "sinusoidal",
        "curriculum.s0": "20",
        "curriculum.s1": "250",
        "injection.ratio": "0.04",
        "model.kind": "cond_unet",
        "model.base_channels": "16",
        "model.res_blocks": "1",
        "model.channel_multipliers": "1,2,2",
        "model.attention": "16",
        "wag.w": "0.8",
        "data.kind": "phantom",
        "data.n": "256",
        "data.size": "64",
        "data.sigma_dose": "0.15",
        "data.ellipses": "2,5",
        "eval.samples": "16",
        "checkpoint_every": "1500",
        "seed": "0",
    },
    "image32": {
        "task": "image32",
        "total_steps": "2000",
        "batch_size": "16",
        "learning_rate": "4e-4",
        "optimizer": "rectified-adam",
        "grid": "sinusoidal",
        "level_sampler": "beta",
        "curriculum.kind": "sinusoidal",
        "curriculum.s0": "20",
        "curriculum.s1": "250",
        "injection.ratio": "0.04",
        "model.kind": "unet",
        "model.base_channels": "16",
        "model.res_blocks": "1",
        "model.channel_multipliers": "1,2,2",
        "model.attention": "16",
        "data.kind": "image_dir",
        "data.size": "32",
        "eval.samples": "64",
        "eval.projections": "64",
        "seed": "0",
    },
}


def preset_config(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Config(PRESETS[name])


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"override has bad key {key!r}")
        out[key] = val.strip()
    return out


# ---------------------------------------------------------------------------
# Builders.


def noise_range_from(cfg: Config) -> NoiseRange:
    return NoiseRange(
        sigma_min=cfg.get_float("sigma.min", 0.002),
        sigma_max=cfg.get_float("sigma.max", 80.0),
        rho=cfg.get_float("sigma.rho", 7.0),
    )


def train_config_from(cfg: Config) -> TrainConfig:
    total = cfg.get_int("total_steps", 1000)
    curriculum = CurriculumConfig(
        s0=cfg.get_int("curriculum.s0", 20),
        s1=cfg.get_int("curriculum.s1", 250),
        total_steps=total,
        kind=cfg.get("curriculum.kind", "sinusoidal"),
        monotone_clip=cfg.get_bool("curriculum.monotone_clip", False),
    )
    ratio = cfg.get_float("injection.ratio", 0.0)
    injection = None
    if ratio > 0:
        injection = HighNoiseInjection(
            ratio=ratio,
            low=cfg.get_float("injection.low", 40.0),
            high=cfg.get_float("injection.high", 80.0),
        )
    huber_c = cfg.get_float("huber.c", -1.0)
    return TrainConfig(
        total_steps=total,
        batch_size=cfg.get_int("batch_size", 64),
        learning_rate=cfg.get_float("learning_rate", 1e-4),
        optimizer=cfg.get("optimizer", "rectified-adam"),
        curriculum=curriculum,
        level_sampler=cfg.get("level_sampler", "beta"),
        lognormal=LognormalParams(
            p_mean=cfg.get_float("lognormal.p_mean", -1.1),
            p_std=cfg.get_float("lognormal.p_std", 2.0),
        ),
        beta=BetaParams(
            alpha=cfg.get_float("beta.alpha", 0.5),
            beta=cfg.get_float("beta.beta", 5.0),
        ),
        injection=injection,
        grid_kind=cfg.get("grid", "sinusoidal"),
        noise_range=noise_range_from(cfg),
        huber_c=None if huber_c <= 0 else huber_c,
        ema=EmaConfig(mu=cfg.get_float("ema.mu", 0.0)),
        scalings=BoundaryScalings(sigma_data=cfg.get_float("sigma_data", 0.5)),
        weighting=cfg.get("weighting", "gap"),
        grad_clip=cfg.get_float("grad_clip", 10.0),
        seed=cfg.get_int("seed", 0),
        checkpoint_every=cfg.get_int("checkpoint_every", 0),
    )


def net_config_from(cfg: Config) -> NetConfig:
    return NetConfig(
        res_blocks_per_stage=cfg.get_int("model.res_blocks", 2),
        base_channels=cfg.get_int("model.base_channels", 32),
        channel_multipliers=cfg.get_ints("model.channel_multipliers", (1, 2, 2)),
        attention_resolutions=cfg.get_ints("model.attention", (16,)),
    )


def build_model_from(cfg: Config, rng: np.random.Generator, in_channels: int = 1,
                     input_res: int = 0, in_dim: int = 2):
    kind = cfg.get("model.kind", "mlp")
    sd = cfg.get_float("sigma_data", 0.5)
    if kind == "mlp":
        hidden = cfg.get_ints("model.hidden", (128, 128, 128))
        return build_mlp(hidden, in_dim=in_dim, rng=rng, sigma_data=sd)
    if kind == "unet":
        return build_unet(net_config_from(cfg), in_channels=in_channels,
                          out_channels=in_channels, rng=rng, input_res=input_res,
                          sigma_data=sd)
    if kind == "cond_unet":
        wag = WagConfig(w=cfg.get_float("wag.w", 0.8))
        return build_conditional_unet(net_config_from(cfg), wag, in_channels=in_channels,
                                      out_channels=in_channels, rng=rng, input_res=input_res,
                                      sigma_data=sd)
    raise ConfigError(f"unknown model.kind {kind!r}")
