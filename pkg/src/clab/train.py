"""Training loop: curriculum + level sampling + consistency loss + optimizer.

The loop is deterministic given (config, seed): three independent PCG64
streams drive batch selection, noise-level sampling, and Gaussian noise,
and their states are serialized into checkpoints so a resumed run replays
the uninterrupted one bitwise.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .consistency import (
    BoundaryScalings,
    EmaConfig,
    HuberConfig,
    consistency_matching_loss,
    default_huber_c,
    ema_update,
)
from .curriculum import CurriculumConfig, n_for_step
from .data import Dataset, minibatch
from .schedules import (
    BetaParams,
    HighNoiseInjection,
    LognormalParams,
    NoiseRange,
    build_grid,
    inject_high_noise,
    lognormal_index_pmf,
    sample_beta_indices,
    sample_lognormal,
)

OPTIMIZERS = ("rectified-adam", "adam")
LEVEL_SAMPLERS = ("lognormal", "beta")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message carries the batch sigmas."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int
    learning_rate: float = 1e-4
    optimizer: str = "rectified-adam"
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    level_sampler: str = "beta"
    lognormal: LognormalParams = field(default_factory=LognormalParams)
    beta: BetaParams = field(default_factory=BetaParams)
    injection: HighNoiseInjection | None = None
    grid_kind: str = "sinusoidal"
    noise_range: NoiseRange = field(default_factory=NoiseRange)
    huber_c: float | None = None  # None = 0.00054 * sqrt(sample dim)
    ema: EmaConfig = field(default_factory=EmaConfig)
    scalings: BoundaryScalings = field(default_factory=BoundaryScalings)
    weighting: str = "gap"
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.level_sampler not in LEVEL_SAMPLERS:
            raise ValueError(f"level_sampler must be one of {LEVEL_SAMPLERS}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.weighting not in ("gap", "uniform"):
            raise ValueError("weighting must be 'gap' or 'uniform'")
        if self.total_steps and self.curriculum.total_steps != self.total_steps:
            object.__setattr__(self, "curriculum", replace(self.curriculum, total_steps=self.total_steps))


@dataclass
class StepRecord:
    step: int
    n: int
    loss: float
    sigma_mean: float
    sigma_max_frac: float


RUNLOG_HEADER = "step,n,loss,sigma_mean,sigma_max_frac"


def runlog_to_csv(rows: list[StepRecord]) -> str:
    out = [RUNLOG_HEADER]
    for r in rows:
        out.append(f"{r.step},{r.n},{r.loss:.8e},{r.sigma_mean:.8e},{r.sigma_max_frac:.6f}")
    return "\n".join(out) + "\n"


def parse_runlog(text: str) -> list[StepRecord]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != RUNLOG_HEADER:
        raise ValueError("not a run log (missing header)")
    rows = []
    for ln in lines[1:]:
        s, n, loss, sm, sf = ln.split(",")
        rows.append(StepRecord(int(s), int(n), float(loss), float(sm), float(sf)))
    return rows


# ---------------------------------------------------------------------------
# Optimizers (functional).


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm <= 0 or total <= max_norm:
        return grads, total
    scale = max_norm / (total + 1e-12)
    return [g * np.float32(scale) for g in grads], total


def _init_moments(params: list[np.ndarray]):
    return [np.zeros_like(p) for p in params]


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Plain Adam with bias correction. state: {"t", "m", "v"}."""
    b1, b2 = betas
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    t = state.get("t", 0) + 1
    m = state.get("m") or _init_moments(params)
    v = state.get("v") or _init_moments(params)
    new_p, new_m, new_v = [], [], []
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = b1 * mi + (1.0 - b1) * g
        vi = b2 * vi + (1.0 - b2) * g * g
        mhat = mi / bc1
        vhat = vi / bc2
        new_p.append(p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m.append(mi)
        new_v.append(vi)
    return new_p, {"t": t, "m": new_m, "v": new_v}


def rectified_adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Rectified Adam.

    While the variance rectification term is undefined (rho_t <= 4, i.e. the
    first few steps) this is SGD with bias-corrected momentum; afterwards the
    adaptive step is scaled by the rectification factor r_t.
    """
    b1, b2 = betas
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    t = state.get("t", 0) + 1
    m = state.get("m") or _init_moments(params)
    v = state.get("v") or _init_moments(params)
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    b2t = b2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    bc1 = 1.0 - b1**t
    rectified = rho_t > 4.0
    if rectified:
        r_t = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        bc2 = 1.0 - b2t
    new_p, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = b1 * mi + (1.0 - b1) * g
        vi = b2 * vi + (1.0 - b2) * g * g
        mhat = mi / bc1
        if rectified:
            step = lr * r_t * mhat / (np.sqrt(vi / bc2) + eps)
        else:
            step = lr * mhat
        new_p.append(p - step)
        new_m.append(mi)
        new_v.append(vi)
    return new_p, {"t": t, "m": new_m, "v": new_v}


_OPT_FNS = {"adam": adam_step, "rectified-adam": rectified_adam_step}


# ---------------------------------------------------------------------------
# Training state.


@dataclass
class TrainState:
    cfg: TrainConfig
    net: object
    ema: dict
    opt_state: dict
    data_rng: np.random.Generator
    level_rng: np.random.Generator
    noise_rng: np.random.Generator
    huber: HuberConfig
    step: int = 0
    grids: dict = field(default_factory=dict)
    pmfs: dict = field(default_factory=dict)
    last: StepRecord | None = None

    def grid_for(self, n: int):
        if n not in self.grids:
            self.grids[n] = build_grid(self.cfg.grid_kind, self.cfg.noise_range, n)
        return self.grids[n]

    def pmf_for(self, n: int):
        if n not in self.pmfs:
            self.pmfs[n] = lognormal_index_pmf(self.grid_for(n), self.cfg.lognormal)
        return self.pmfs[n]


def _spawn_rngs(seed: int):
    seqs = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(s) for s in seqs)


def init_state(cfg: TrainConfig, net, sample_shape: tuple) -> TrainState:
    data_rng, level_rng, noise_rng = _spawn_rngs(cfg.seed)
    dim = int(np.prod(sample_shape))
    huber = HuberConfig(c=cfg.huber_c if cfg.huber_c is not None else default_huber_c(dim))
    ema = {k: v.copy() for k, v in net.state_dict().items()}
    return TrainState(cfg, net, ema, {"t": 0, "m": None, "v": None},
                      data_rng, level_rng, noise_rng, huber)


def _sample_indices(state: TrainState, grid, count: int) -> np.ndarray:
    cfg = state.cfg
    if cfg.level_sampler == "lognormal":
        return sample_lognormal(grid, cfg.lognormal, count, state.level_rng)
    return sample_beta_indices(grid, cfg.beta, count, state.level_rng)


def train_step(state: TrainState, batch, k: int) -> tuple[TrainState, float]:
    """One optimization step at curriculum position k.

    ``batch`` is either an (B, ...) array of clean samples or a tuple
    (clean, cond) for conditional training.
    """
    cfg = state.cfg
    cond = None
    if isinstance(batch, tuple):
        x0, cond = batch
    else:
        x0 = batch
    b = x0.shape[0]

    n = n_for_step(k, cfg.curriculum)
    grid = state.grid_for(n)
    idx = _sample_indices(state, grid, b)
    sigma_lo = grid.sigmas[idx]
    if cfg.injection is not None and cfg.injection.ratio > 0:
        sigma_lo = inject_high_noise(sigma_lo, cfg.injection, state.level_rng)
    # Pair completion: sigma_hi is the smallest grid level strictly above
    # sigma_lo. For on-grid entries that is exactly the next level; injected
    # sigmas (always < sigma_max) get the level just above them.
    hi_idx = np.minimum(np.searchsorted(grid.sigmas, sigma_lo, side="right"), grid.n - 1)
    sigma_hi = grid.sigmas[hi_idx]

    z = state.noise_rng.standard_normal(x0.shape).astype(x0.dtype)
    loss = consistency_matching_loss(
        state.net, x0, z, sigma_lo, sigma_hi, state.huber,
        teacher_params=state.ema, scalings=cfg.scalings,
        sigma_min=cfg.noise_range.sigma_min, cond=cond, weighting=cfg.weighting,
    )
    loss_val = float(loss.data)
    if not math.isfinite(loss_val):
        raise TrainingDiverged(
            f"non-finite loss {loss_val} at step {k} (N={n});"
            f" sigma_lo={np.array2string(sigma_lo, precision=4)}"
            f" sigma_hi={np.array2string(sigma_hi, precision=4)}"
        )

    state.net.zero_grad()
    loss.backward()
    params = [p.data for _, p in state.net.named_parameters()]
    grads = [p.grad for _, p in state.net.named_parameters()]
    grads, _ = clip_global_norm(grads, cfg.grad_clip)
    new_params, state.opt_state = _OPT_FNS[cfg.optimizer](
        params, grads, state.opt_state, cfg.learning_rate
    )
    for (_, p), q in zip(state.net.named_parameters(), new_params):
        p.data = q
    state.ema = ema_update(state.ema, state.net.state_dict(), cfg.ema)

    half_max = 0.5 * cfg.noise_range.sigma_max
    state.last = StepRecord(
        step=k, n=n, loss=loss_val,
        sigma_mean=float(np.mean(sigma_hi)),
        sigma_max_frac=float(np.mean(sigma_hi >= half_max)),
    )
    state.step = k + 1
    return state, loss_val


# ---------------------------------------------------------------------------
# Checkpoint plumbing.

_CKPT_RE = re.compile(r"^ckpt_step(\d{8})\.bin$")


def _rng_state_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _restore_rng(state_json: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def save_train_checkpoint(path, state: TrainState, extra_meta: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, val in state.net.state_dict().items():
        tensors[f"model.{name}"] = val
    for name, val in state.ema.items():
        tensors[f"ema.{name}"] = val
    names = [nm for nm, _ in state.net.named_parameters()]
    if state.opt_state.get("m") is not None:
        for name, mi, vi in zip(names, state.opt_state["m"], state.opt_state["v"]):
            tensors[f"opt.m.{name}"] = mi
            tensors[f"opt.v.{name}"] = vi
    meta = {
        "step": state.step,
        "opt_t": state.opt_state.get("t", 0),
        "huber_c": state.huber.c,
        "rng_data": _rng_state_json(state.data_rng),
        "rng_level": _rng_state_json(state.level_rng),
        "rng_noise": _rng_state_json(state.noise_rng),
    }
    if extra_meta:
        meta.update(extra_meta)
    ckpt.save_tensors(path, tensors, meta)


def load_train_checkpoint(path, cfg: TrainConfig, net) -> TrainState:
    tensors, meta = ckpt.load_tensors(path)
    model = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    net.load_state_dict(model)
    ema = {k[len("ema.") :]: v for k, v in tensors.items() if k.startswith("ema.")}
    names = [nm for nm, _ in net.named_parameters()]
    m = [tensors[f"opt.m.{nm}"] for nm in names] if f"opt.m.{names[0]}" in tensors else None
    v = [tensors[f"opt.v.{nm}"] for nm in names] if f"opt.v.{names[0]}" in tensors else None
    state = TrainState(
        cfg, net, ema, {"t": meta.get("opt_t", 0), "m": m, "v": v},
        _restore_rng(meta["rng_data"]), _restore_rng(meta["rng_level"]), _restore_rng(meta["rng_noise"]),
        HuberConfig(c=float(meta["huber_c"])), step=int(meta["step"]),
    )
    return state


def load_model_params(path) -> tuple[dict, dict]:
    """Model parameters only (as name->array without the checkpoint prefix)."""
    tensors, meta = ckpt.load_tensors(path)
    model = {k[len("model.") :]: v for k, v in tensors.items() if k.startswith("model.")}
    if not model:
        raise ckpt.CheckpointError(f"{path}: no model.* tensors in container")
    return model, meta


def latest_checkpoint(out_dir) -> str | None:
    best = None
    best_step = -1
    for name in os.listdir(out_dir):
        m = _CKPT_RE.match(name)
        if m and int(m.group(1)) > best_step:
            best_step = int(m.group(1))
            best = os.path.join(out_dir, name)
    return best


# ---------------------------------------------------------------------------
# Loop.


@dataclass
class TrainResult:
    state: TrainState
    runlog: list[StepRecord]
    checkpoint_path: str | None
    batch_digests: list[str]
    wall_seconds: float


def _write_outputs(out_dir, rows, digests):
    with open(os.path.join(out_dir, "runlog.csv"), "w") as f:
        f.write(runlog_to_csv(rows))
    with open(os.path.join(out_dir, "batches.sha256"), "w") as f:
        f.write("".join(d + "\n" for d in digests))


def train_loop(cfg: TrainConfig, net, data, cond=None, out_dir=None, resume: bool = False,
               progress=None, extra_meta: dict | None = None) -> TrainResult:
    """Run cfg.total_steps optimization steps over ``data``.

    data: Dataset or (n, ...) array of clean samples; cond: optional aligned
    array of condition images. With out_dir set, checkpoints, the CSV run
    log, and per-step batch digests are written there; resume=True picks up
    from the newest checkpoint in out_dir.
    """
    samples = data.samples if isinstance(data, Dataset) else np.asarray(data)
    if samples.shape[0] == 0:
        raise ValueError("empty dataset")
    if cond is not None and cond.shape[0] != samples.shape[0]:
        raise ValueError("cond/data length mismatch")

    rows: list[StepRecord] = []
    digests: list[str] = []
    state = None
    if resume:
        if out_dir is None:
            raise ValueError("resume requires out_dir")
        path = latest_checkpoint(out_dir)
        if path is not None:
            state = load_train_checkpoint(path, cfg, net)
            log_path = os.path.join(out_dir, "runlog.csv")
            if os.path.exists(log_path):
                with open(log_path) as f:
                    rows = [r for r in parse_runlog(f.read()) if r.step < state.step]
            dig_path = os.path.join(out_dir, "batches.sha256")
            if os.path.exists(dig_path):
                with open(dig_path) as f:
                    digests = [ln.strip() for ln in f if ln.strip()][: state.step]
    if state is None:
        state = init_state(cfg, net, samples.shape[1:])

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    t_start = time.perf_counter()
    for k in range(state.step, cfg.total_steps):
        if cond is None:
            x0 = minibatch(samples, cfg.batch_size, state.data_rng)
            batch = x0
        else:
            # condition rows must track the clean rows, so draw indices once
            idx = state.data_rng.integers(0, samples.shape[0], size=cfg.batch_size)
            x0 = samples[idx]
            batch = (x0, cond[idx])
        digests.append(hashlib.sha256(np.ascontiguousarray(x0).tobytes()).hexdigest())
        state, loss = train_step(state, batch, k)
        assert state.last is not None and state.last.n == n_for_step(k, cfg.curriculum)
        rows.append(state.last)
        if progress is not None:
            progress(state.last)
        if out_dir is not None and cfg.checkpoint_every and (k + 1) % cfg.checkpoint_every == 0:
            save_train_checkpoint(os.path.join(out_dir, f"ckpt_step{k + 1:08d}.bin"), state, extra_meta)
            _write_outputs(out_dir, rows, digests)
    wall = time.perf_counter() - t_start

    ckpt_path = None
    if out_dir is not None:
        ckpt_path = os.path.join(out_dir, f"ckpt_step{cfg.total_steps:08d}.bin")
        save_train_checkpoint(ckpt_path, state, extra_meta)
        _write_outputs(out_dir, rows, digests)
    return TrainResult(state, rows, ckpt_path, digests, wall)
