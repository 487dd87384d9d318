"""Desk-scale quality metrics and schedule statistics.

PSNR/SSIM for images, sliced Wasserstein-2 for sample sets (the stand-in
for FID at this scale), and a schedule report that summarizes curriculum
plus noise-level sampling behaviour against exact tail masses.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .curriculum import n_for_step
from .schedules import build_grid, lognormal_index_pmf, sample_beta_u, sample_lognormal


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n_samples: int
    config_hash: str

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


METRIC_CSV_HEADER = "metric,value,n,config_hash"


def metric_csv(reports: list[MetricReport]) -> str:
    lines = [METRIC_CSV_HEADER]
    for r in reports:
        lines.append(f"{r.name},{r.value:.8g},{r.n_samples},{r.config_hash}")
    return "\n".join(lines) + "\n"


def psnr(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """10*log10(data_range^2 / MSE); +inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    wins = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(wins, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7, data_range: float = 2.0,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over valid positions with a Gaussian window."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2D grayscale images")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than window {window}")
    kern = gaussian_window(window, sigma)
    mu_a = _windowed(a, kern)
    mu_b = _windowed(b, kern)
    var_a = _windowed(a * a, kern) - mu_a**2
    var_b = _windowed(b * b, kern) - mu_b**2
    cov = _windowed(a * b, kern) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def sliced_wasserstein(set_a: np.ndarray, set_b: np.ndarray, n_projections: int,
                       rng: np.random.Generator) -> float:
    """Mean over random unit projections of the 1D 2-Wasserstein distance.

    Unequal sample counts are handled by comparing empirical quantile
    functions (inverted CDF) at max(n, m) midpoint levels; for equal counts
    this reduces exactly to matching order statistics.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim > 2:
        a = a.reshape(a.shape[0], -1)
    if b.ndim > 2:
        b = b.reshape(b.shape[0], -1)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    dirs = rng.standard_normal((d, n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = a @ dirs
    pb = b @ dirs
    k = max(a.shape[0], b.shape[0])
    qs = (np.arange(k) + 0.5) / k
    qa = np.quantile(pa, qs, axis=0, method="inverted_cdf")
    qb = np.quantile(pb, qs, axis=0, method="inverted_cdf")
    w2 = np.sqrt(np.mean((qa - qb) ** 2, axis=0))
    return float(np.mean(w2))


def mode_histogram(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Counts of nearest-center assignments; used for mode-coverage checks."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return np.bincount(idx, minlength=centers.shape[0])


# ---------------------------------------------------------------------------
# Schedule statistics.


def beta_index_pmf(grid, params) -> np.ndarray:
    """Exact index PMF induced by beta sampling + snap-to-grid."""
    u_edges = (grid.sigmas - grid.sigma_min) / (grid.sigma_max - grid.sigma_min)
    cdf = betainc(params.alpha, params.beta, np.clip(u_edges, 0.0, 1.0))
    pmf = np.diff(cdf)
    # the top pair absorbs the clip of draws landing at/above the last edge
    pmf[-1] += 1.0 - cdf[-1]
    return pmf


@dataclass
class ScheduleReport:
    curriculum_rows: list
    pmf_tables: dict
    reports: list
    config_hash: str

    def curriculum_csv(self) -> str:
        lines = ["step,n"] + [f"{k},{n}" for k, n in self.curriculum_rows]
        return "\n".join(lines) + "\n"

    def pmf_csv(self, k: int) -> str:
        lines = ["index,sigma,pmf"]
        for idx, sig, p in self.pmf_tables[k]:
            lines.append(f"{idx},{sig:.10g},{p:.10g}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        return metric_csv(self.reports)


def schedule_report(cfg, n_draws: int = 100_000, at_steps=None, rng=None,
                    config_hash: str | None = None, step_stride: int = 1) -> ScheduleReport:
    """Summarize curriculum and sampling behaviour of a training config.

    cfg is a train.TrainConfig (anything with curriculum / grid_kind /
    noise_range / level_sampler / lognormal / beta / injection /
    batch_size fields works). Reports the empirical fraction of sampled
    sigma >= sigma_max/2 next to the exact tail mass.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if config_hash is None:
        config_hash = hashlib.sha256(repr(cfg).encode()).hexdigest()[:12]
    K = cfg.curriculum.total_steps
    rows = [(k, n_for_step(k, cfg.curriculum)) for k in range(0, K + 1, max(step_stride, 1))]
    if at_steps is None:
        at_steps = sorted({0, K // 4, K // 2, (3 * K) // 4, K})
    threshold = 0.5 * cfg.noise_range.sigma_max

    pmf_tables = {}
    for k in at_steps:
        n = n_for_step(k, cfg.curriculum)
        grid = build_grid(cfg.grid_kind, cfg.noise_range, n)
        if cfg.level_sampler == "lognormal":
            pmf = lognormal_index_pmf(grid, cfg.lognormal)
        else:
            pmf = beta_index_pmf(grid, cfg.beta)
        pmf_tables[k] = [(i, float(grid.sigmas[i]), float(pmf[i])) for i in range(pmf.size)]

    # tail statistics at the largest-N grid the curriculum reaches
    n_max = max(n for _, n in rows)
    grid = build_grid(cfg.grid_kind, cfg.noise_range, n_max)
    if cfg.level_sampler == "lognormal":
        pmf = lognormal_index_pmf(grid, cfg.lognormal)
        idx = sample_lognormal(grid, cfg.lognormal, n_draws, rng)
        emp = float(np.mean(grid.sigmas[idx] >= threshold))
        exact = float(pmf[grid.sigmas[:-1] >= threshold].sum())
    else:
        u = sample_beta_u(cfg.beta, n_draws, rng)
        sig = cfg.noise_range.sigma_min + u * (cfg.noise_range.sigma_max - cfg.noise_range.sigma_min)
        emp = float(np.mean(sig >= threshold))
        u_thr = (threshold - cfg.noise_range.sigma_min) / (cfg.noise_range.sigma_max - cfg.noise_range.sigma_min)
        exact = float(1.0 - betainc(cfg.beta.alpha, cfg.beta.beta, u_thr))

    reports = [
        MetricReport("fraction_sigma_ge_half_max_empirical", emp, n_draws, config_hash),
        MetricReport("fraction_sigma_ge_half_max_exact", exact, n_draws, config_hash),
    ]
    if cfg.injection is not None:
        b = cfg.batch_size
        injected = math.floor(cfg.injection.ratio * b + 1e-9) / b
        reports.append(MetricReport("injected_fraction_per_batch", injected, b, config_hash))
    return ScheduleReport(rows, pmf_tables, reports, config_hash)
