"""The consistency-function layer: boundary parameterization, trajectory
pairs, the matching loss with its stop-gradient teacher, EMA, and samplers.

The model is f(x, sigma) = c_skip(sigma) x + c_out(sigma) F(x, sigma),
with coefficients chosen so f(x, sigma_min) = x identically. Training
matches f on adjacent grid levels of the same trajectory: both pair
members share one noise draw z, the teacher branch runs without a tape
under (possibly EMA'd) teacher parameters, and pairs are weighted by
1/(sigma_hi - sigma_lo) before batch averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module
from .schedules import NoiseGrid, loss_weight


@dataclass(frozen=True)
class BoundaryScalings:
    """Data scale for the skip/out coefficient pair."""

    sigma_data: float = 0.5

    def __post_init__(self):
        if self.sigma_data <= 0:
            raise ValueError(f"sigma_data must be positive, got {self.sigma_data}")


@dataclass(frozen=True)
class HuberConfig:
    """Transition scale of the pseudo-Huber distance; c=0 degenerates to L2."""

    c: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"c must be nonnegative, got {self.c}")


@dataclass(frozen=True)
class EmaConfig:
    """Teacher decay rate; mu=0 keeps the teacher equal to the student."""

    mu: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mu <= 1:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")


def default_huber_c(data_dim: int) -> float:
    """The dimension-scaled transition point 0.00054 * sqrt(D)."""
    if data_dim < 1:
        raise ValueError(f"data_dim must be >= 1, got {data_dim}")
    return 0.00054 * math.sqrt(data_dim)


def boundary_scalings(sigma, cfg: BoundaryScalings, sigma_min: float):
    """Coefficients (c_skip, c_out) at the given noise level(s).

    c_skip = sd^2 / ((sigma - sigma_min)^2 + sd^2)
    c_out  = sd (sigma - sigma_min) / sqrt(sigma^2 + sd^2)

    At sigma = sigma_min this is exactly (1, 0), pinning f to the identity.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < sigma_min):
        raise ValueError("sigma below sigma_min")
    sd = cfg.sigma_data
    shifted = sigma - sigma_min
    c_skip = sd**2 / (shifted**2 + sd**2)
    c_out = sd * shifted / np.sqrt(sigma**2 + sd**2)
    if c_skip.ndim == 0:
        return float(c_skip), float(c_out)
    return c_skip, c_out


def _per_sample_shape(x_ndim: int, batch: int):
    return (batch,) + (1,) * (x_ndim - 1)


def consistency_forward(net, x, sigma, cfg: BoundaryScalings = BoundaryScalings(),
                        sigma_min: float = 0.002, cond=None):
    """f(x, sigma) = c_skip x + c_out F(x, sigma[, cond]).

    sigma may be a scalar or a per-sample vector. The coefficients are
    cast to x's dtype so a float32 forward stays float32.
    """
    x = ad.as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise ValueError("non-finite values in input")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
    c_skip, c_out = boundary_scalings(sigma, cfg, sigma_min)
    shape = _per_sample_shape(x.ndim, x.shape[0])
    c_skip = c_skip.reshape(shape).astype(x.dtype)
    c_out = c_out.reshape(shape).astype(x.dtype)
    f_out = net(x, sigma) if cond is None else net(x, sigma, cond)
    return ad.add(ad.mul(x, c_skip), ad.mul(f_out, c_out))


@dataclass(frozen=True)
class TrajectoryPair:
    """Two noisings of the same clean sample with one shared draw z."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    sigma_lo: np.ndarray
    sigma_hi: np.ndarray
    z: np.ndarray


def make_pair(x0: np.ndarray, z: np.ndarray, sigma_lo, sigma_hi) -> TrajectoryPair:
    """x_lo = x0 + sigma_lo z and x_hi = x0 + sigma_hi z, same z.

    With the shared draw, x_hi - x_lo = (sigma_hi - sigma_lo) z up to
    rounding: the pair sits on one trajectory, which is what makes the
    teacher target an unbiased stand-in for the reverse-step target.
    """
    x0 = np.asarray(x0)
    z = np.asarray(z)
    if x0.shape != z.shape:
        raise ValueError(f"x0 {x0.shape} and z {z.shape} must match")
    lo = np.broadcast_to(np.asarray(sigma_lo, dtype=np.float64), (x0.shape[0],))
    hi = np.broadcast_to(np.asarray(sigma_hi, dtype=np.float64), (x0.shape[0],))
    if np.any(hi <= lo):
        raise ValueError("need sigma_lo < sigma_hi elementwise")
    shape = _per_sample_shape(x0.ndim, x0.shape[0])
    lo_b = lo.reshape(shape).astype(x0.dtype)
    hi_b = hi.reshape(shape).astype(x0.dtype)
    return TrajectoryPair(
        x_lo=x0 + lo_b * z,
        x_hi=x0 + hi_b * z,
        sigma_lo=lo,
        sigma_hi=hi,
        z=z,
    )


def pseudo_huber(a, b, cfg: HuberConfig, batched: bool = False):
    """d(a, b) = sqrt(|a - b|^2 + c^2) - c over the flattened difference.

    With batched=True the norm runs per leading-axis sample and a length-B
    tensor comes back; otherwise one scalar over everything. Inputs may be
    tape tensors, in which case the result carries gradients.
    """
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = ad.sub(a, b)
    if batched:
        flat = ad.reshape(diff, (a.shape[0], -1))
        sq = ad.tsum(ad.mul(flat, flat), axis=1)
    else:
        sq = ad.tsum(ad.mul(diff, diff))
    c = cfg.c
    return ad.sub(ad.sqrt(ad.add(sq, c * c)), c)


def consistency_matching_loss(net, x0, z, sigma_lo, sigma_hi, huber: HuberConfig,
                              teacher_params: dict | None = None,
                              scalings: BoundaryScalings = BoundaryScalings(),
                              sigma_min: float = 0.002, cond=None,
                              weighting: str = "gap"):
    """Weighted pair loss with explicit sigma values (grid or injected).

    mean over pairs of lambda * d(f_student(x_hi, sigma_hi),
    f_teacher(x_lo, sigma_lo)), lambda = 1/(sigma_hi - sigma_lo) under
    "gap" weighting or 1 under "uniform". The teacher forward runs without
    a tape; teacher_params=None evaluates it at the student's current
    values (the mu=0 teacher), otherwise under the given parameter set.
    """
    x0 = np.asarray(x0)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if weighting not in ("gap", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    pair = make_pair(x0, z, sigma_lo, sigma_hi)

    with ad.no_grad():
        if teacher_params is None:
            teacher_out = consistency_forward(net, pair.x_lo, pair.sigma_lo, scalings, sigma_min, cond=cond)
        else:
            with net.using_params(teacher_params):
                teacher_out = consistency_forward(net, pair.x_lo, pair.sigma_lo, scalings, sigma_min, cond=cond)
    target = Tensor(teacher_out.data)  # constant: no path back to parameters

    student_out = consistency_forward(net, pair.x_hi, pair.sigma_hi, scalings, sigma_min, cond=cond)
    d = pseudo_huber(student_out, target, huber, batched=True)
    if weighting == "gap":
        lam = loss_weight(pair.sigma_lo, pair.sigma_hi).astype(student_out.dtype)
        return ad.tmean(ad.mul(d, lam))
    return ad.tmean(d)


def ct_loss(net, x0, z, indices, grid: NoiseGrid, huber: HuberConfig,
            teacher_params: dict | None = None,
            scalings: BoundaryScalings = BoundaryScalings(),
            cond=None, weighting: str = "gap"):
    """Consistency-training loss over adjacent-pair indices of a grid.

    indices are 0-based pair positions j, selecting (sigmas[j], sigmas[j+1]).
    Returns a scalar tape tensor; call .backward() for parameter grads.
    """
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("empty batch")
    if np.any(indices < 0) or np.any(indices > grid.n - 2):
        raise ValueError(f"indices outside [0, {grid.n - 2}]")
    return consistency_matching_loss(
        net, x0, z,
        grid.sigmas[indices], grid.sigmas[indices + 1],
        huber, teacher_params=teacher_params, scalings=scalings,
        sigma_min=grid.sigma_min, cond=cond, weighting=weighting,
    )


def ema_update(theta_minus: dict, theta: dict, cfg: EmaConfig) -> dict:
    """theta_minus <- mu * theta_minus + (1 - mu) * theta, off the tape.

    The endpoint cases copy exactly: mu=0 returns theta's values, mu=1
    keeps theta_minus.
    """
    if set(theta_minus) != set(theta):
        raise ValueError("parameter sets are not congruent")
    out = {}
    for name, new in theta.items():
        old = theta_minus[name]
        if old.shape != new.shape:
            raise ValueError(f"shape mismatch for {name}: {old.shape} vs {new.shape}")
        if cfg.mu == 0.0:
            out[name] = new.copy()
        elif cfg.mu == 1.0:
            out[name] = old.copy()
        else:
            out[name] = cfg.mu * old + (1.0 - cfg.mu) * new
    return out


@dataclass
class ConsistencyFunction:
    """A trained f: network plus scalings plus its noise interval."""

    net: Module
    scalings: BoundaryScalings = BoundaryScalings()
    sigma_min: float = 0.002
    sigma_max: float = 80.0

    def __call__(self, x, sigma, cond=None) -> np.ndarray:
        with ad.no_grad():
            return consistency_forward(self.net, x, sigma, self.scalings, self.sigma_min, cond=cond).data


def single_step_sample(f: ConsistencyFunction, z: np.ndarray, sigma_max: float | None = None,
                       cond=None) -> np.ndarray:
    """One network evaluation: f(sigma_max * z, sigma_max)."""
    s = f.sigma_max if sigma_max is None else sigma_max
    z = np.asarray(z)
    return f(s * z, s, cond=cond)


def multi_step_sample(f: ConsistencyFunction, sigmas, z: np.ndarray,
                      rng: np.random.Generator, cond=None) -> np.ndarray:
    """Alternate denoising and partial re-noising down a descending schedule.

    x = f(sigma_max z, sigma_max); then for each later sigma:
    x <- f(x + sqrt(sigma^2 - sigma_min^2) z', sigma) with fresh z'.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1 or sigmas.size < 1:
        raise ValueError("need at least one sigma")
    if np.any(np.diff(sigmas) >= 0):
        raise ValueError("sigmas must be strictly descending")
    if abs(sigmas[0] - f.sigma_max) > 1e-9 * f.sigma_max:
        raise ValueError(f"schedule must start at sigma_max={f.sigma_max}, got {sigmas[0]}")
    if np.any(sigmas < f.sigma_min):
        raise ValueError("schedule goes below sigma_min")
    x = single_step_sample(f, z, cond=cond)
    for s in sigmas[1:]:
        step_noise = math.sqrt(s * s - f.sigma_min * f.sigma_min)
        z_new = rng.standard_normal(x.shape).astype(x.dtype)
        x = f(x + x.dtype.type(step_noise) * z_new, s, cond=cond)
    return x
