"""Step-count curricula: map the training step k to the grid size N(k).

Two published schedules plus a fixed-N baseline:

* improved: N doubles from s0+1 on a fixed cadence until it caps at s1+1.
* sinusoidal: N(k) = min(ceil(|s1 sin(3 pi k / (2K)) + s0|) + 1, s1 + 1),
  taken verbatim. It is deliberately non-monotone: it peaks at k = K/3,
  falls back to s0+1 at k = 2K/3, and ends at s1 - s0 + 1.
* constant: always s1 + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class CurriculumConfig:
    """Curriculum parameters.

    Args:
        s0: starting discretization scale, >= 1.
        s1: final/maximum scale, > s0. The grid size never exceeds s1+1.
        total_steps: K, the training horizon the schedule is stretched over.
        kind: "improved", "sinusoidal", or "constant".
        monotone_clip: freeze the sinusoidal schedule at its k = K/3 peak
            instead of following the fall-and-rise tail. Off by default;
            the published ablations use the unclipped formula.
    """

    s0: int = 20
    s1: int = 250
    total_steps: int = 100000
    kind: str = "sinusoidal"
    monotone_clip: bool = False

    def __post_init__(self):
        if not 1 <= self.s0 < self.s1:
            raise ValueError(f"need 1 <= s0 < s1, got ({self.s0}, {self.s1})")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.kind not in ("improved", "sinusoidal", "constant"):
            raise ValueError(f"unknown curriculum kind {self.kind!r}")


def _check_step(k: int, cfg: CurriculumConfig):
    if not 0 <= k <= cfg.total_steps:
        raise ValueError(f"step {k} outside [0, {cfg.total_steps}]")


def _sinpi(r: float) -> float:
    """sin(pi * r) with exact values at half-integer r.

    math.sin(math.pi * r) misses the anchors (sin(pi) ~ 1.2e-16), which
    would shift a ceil() landing exactly on an integer. fmod by 2 is exact
    in floating point, so half-integer inputs are recognized exactly.
    """
    r = math.fmod(r, 2.0)
    if r < 0:
        r += 2.0
    if r == 0.0 or r == 1.0:
        return 0.0
    if r == 0.5:
        return 1.0
    if r == 1.5:
        return -1.0
    return math.sin(math.pi * r)


def improved_n(k: int, cfg: CurriculumConfig) -> int:
    """Exponential doubling schedule.

    N(k) = min(s0 * 2^floor(k / K'), s1) + 1 with
    K' = floor(K / (log2(s1/s0) + 1)), so the schedule spends roughly equal
    step budget at each doubling and saturates at s1 + 1.
    """
    if cfg.kind != "improved":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'improved'")
    _check_step(k, cfg)
    k_prime = int(cfg.total_steps // (math.log2(cfg.s1 / cfg.s0) + 1.0))
    # Degenerate short runs can floor K' to 0; one step per stage then.
    k_prime = max(k_prime, 1)
    # Cap the exponent: beyond 64 doublings the min() is already saturated.
    e = min(k // k_prime, 64)
    return min(cfg.s0 * (1 << e), cfg.s1) + 1


def sinusoidal_n(k: int, cfg: CurriculumConfig, monotone_clip: bool | None = None) -> int:
    """Sinusoidal schedule, Eq.-for-Eq. with its published form.

    N(k) = min(ceil(|s1 * sin(3 pi k / (2K)) + s0|) + 1, s1 + 1).

    For the default anchors (s0=20, s1=250) this gives 21 at k=0, the cap
    251 around k=K/3, back to 21 at k=2K/3, and 231 at k=K. When
    monotone_clip is on, the argument is clamped at the quarter-period so
    N holds at the cap from k = K/3 onward.
    """
    if cfg.kind != "sinusoidal":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'sinusoidal'")
    _check_step(k, cfg)
    if monotone_clip is None:
        monotone_clip = cfg.monotone_clip
    # Integer multiply before dividing: 3k/(2K) is then exact at the
    # anchor steps (k = K/3 -> 0.5, 2K/3 -> 1.0, K -> 1.5).
    r = (3 * k) / (2 * cfg.total_steps)
    if monotone_clip:
        r = min(r, 0.5)
    raw = math.ceil(abs(cfg.s1 * _sinpi(r) + cfg.s0)) + 1
    # The formula can only produce 1 if the sine term exactly cancels s0;
    # a grid still needs two levels.
    return max(min(raw, cfg.s1 + 1), 2)


def constant_n(cfg: CurriculumConfig) -> int:
    """Fixed-N baseline: always s1 + 1."""
    if cfg.kind != "constant":
        raise ValueError(f"config kind is {cfg.kind!r}, not 'constant'")
    return cfg.s1 + 1


def n_for_step(k: int, cfg: CurriculumConfig) -> int:
    """Dispatch on cfg.kind."""
    if cfg.kind == "improved":
        return improved_n(k, cfg)
    if cfg.kind == "sinusoidal":
        return sinusoidal_n(k, cfg)
    return constant_n(cfg)
