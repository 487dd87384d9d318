"""Synthetic data generators and image ingestion.

Everything is normalized to [-1, 1]: toy 2D point clouds, random-ellipse
phantoms with a simulated low-dose degradation, and directories of small
grayscale/RGB images.  Includes a bit-exact binary PGM (P5) reader/writer.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

DATASET_KINDS = ("gauss2d", "image_dir", "phantom")


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    kind: str
    dims: tuple = field(init=False)

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        s = self.samples
        if not np.all(np.isfinite(s)):
            raise ValueError("dataset contains non-finite samples")
        if s.size and (s.min() < -1.0 or s.max() > 1.0):
            raise ValueError("dataset samples must lie in [-1, 1]")
        object.__setattr__(self, "dims", tuple(s.shape[1:]))

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class PhantomPair:
    clean: np.ndarray
    low_dose: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        if self.clean.shape != self.low_dose.shape:
            raise ValueError("clean and low_dose shapes differ")


def gen_gauss2d(n: int, modes: int, rng: np.random.Generator,
                radius: float = 0.7, mode_sigma: float = 0.05) -> Dataset:
    """Equally weighted Gaussian mixture with mode centers on a ring.

    Centers sit at angle 2*pi*m/modes, radius `radius`; each mode is
    isotropic with std `mode_sigma`.  Defaults keep essentially all mass
    inside [-1, 1]^2; the clip below only enforces the container invariant.
    """
    if modes < 1:
        raise ValueError("modes must be >= 1")
    angles = 2.0 * np.pi * np.arange(modes) / modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    comp = rng.integers(0, modes, size=n)
    pts = centers[comp] + mode_sigma * rng.standard_normal((n, 2))
    pts = np.clip(pts, -1.0, 1.0).astype(np.float32)
    return Dataset(pts, "gauss2d")


def mode_centers(modes: int, radius: float = 0.7) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _ellipse_mask(size: int, cx, cy, a, b, theta) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    x = xx - cx
    y = yy - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = x * ct + y * st
    v = -x * st + y * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def gen_phantoms(n: int, size: int, ellipse_count_range: tuple[int, int],
                 rng: np.random.Generator, sigma_dose: float = 0.15) -> list[PhantomPair]:
    """Random-ellipse phantoms with an additive-Gaussian low-dose channel.

    clean   = -1 + sum of random ellipses, clipped to [-1, 1]
    low_dose = clean + N(0, sigma_dose^2), deliberately NOT clipped so the
    residual stays exactly Gaussian.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    lo, hi = ellipse_count_range
    if not (1 <= lo <= hi):
        raise ValueError("bad ellipse_count_range")
    pairs = []
    for _ in range(n):
        canvas = np.full((size, size), -1.0)
        for _ in range(int(rng.integers(lo, hi + 1))):
            cx, cy = rng.uniform(0.2 * size, 0.8 * size, size=2)
            a, b = rng.uniform(0.08 * size, 0.30 * size, size=2)
            theta = rng.uniform(0.0, np.pi)
            intensity = rng.uniform(0.3, 1.0)
            canvas += intensity * _ellipse_mask(size, cx, cy, a, b, theta)
        clean = np.clip(canvas, -1.0, 1.0).astype(np.float32)
        low = clean + np.float32(sigma_dose) * rng.standard_normal((size, size)).astype(np.float32)
        pairs.append(PhantomPair(clean, low, float(sigma_dose)))
    return pairs


def phantom_arrays(pairs: list[PhantomPair]) -> tuple[np.ndarray, np.ndarray]:
    """Stack pairs into (clean, low_dose) arrays of shape (n, 1, s, s)."""
    clean = np.stack([p.clean for p in pairs])[:, None].astype(np.float32)
    low = np.stack([p.low_dose for p in pairs])[:, None].astype(np.float32)
    return clean, low


# ---------------------------------------------------------------------------
# PGM (P5), bit-exact per the netpbm format description.

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    m = _PGM_TOKEN.match(buf, pos)
    if not m:
        raise ValueError("truncated PGM header")
    return m.group(1), m.end()


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval < 256 into a (h, w) uint8 array."""
    with open(path, "rb") as f:
        buf = f.read()
    tok, pos = _read_token(buf, 0)
    if tok != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tok!r})")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if not (0 < maxval < 256):
        raise ValueError(f"{path}: unsupported maxval {maxval} (only 8-bit)")
    pos += 1  # exactly one whitespace byte after maxval
    raster = buf[pos : pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2D uint8 array")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an (h, w) or (h, w, c) float array."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _load_one_image(path: str) -> np.ndarray:
    """Read one image file as (h, w) or (h, w, 3) uint8."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if "A" in im.mode or len(im.getbands()) > 2 else "L")
            return np.asarray(im, dtype=np.uint8)
    raise ValueError(f"{path}: unsupported image format {ext!r}")


def load_image_dir(path, target_size: int) -> Dataset:
    """Load every PGM/PNG under `path`, resized to target_size^2, in [-1, 1].

    Files are processed in sorted filename order so the dataset layout is
    deterministic.  Grayscale inputs become (1, s, s), RGB (3, s, s); mixing
    the two in one directory is an error.
    """
    names = sorted(
        f for f in os.listdir(path) if os.path.splitext(f)[1].lower() in (".pgm", ".png")
    )
    if not names:
        raise ValueError(f"{path}: empty dataset (no PGM/PNG files)")
    imgs = []
    channels = None
    for name in names:
        full = os.path.join(path, name)
        try:
            raw = _load_one_image(full)
        except Exception as e:
            raise ValueError(f"failed to read image {full}: {e}") from e
        c = 1 if raw.ndim == 2 else raw.shape[2]
        if channels is None:
            channels = c
        elif c != channels:
            raise ValueError(f"{full}: channel count {c} differs from earlier files ({channels})")
        res = bilinear_resize(raw.astype(np.float64), target_size, target_size)
        arr = (res / 127.5 - 1.0).astype(np.float32)
        arr = np.clip(arr, -1.0, 1.0)
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        imgs.append(arr)
    return Dataset(np.stack(imgs), "image_dir")


def minibatch(dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sampling with replacement; deterministic given the generator."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    samples = dataset.samples if isinstance(dataset, Dataset) else np.asarray(dataset)
    n = samples.shape[0]
    if n == 0:
        raise ValueError("cannot draw a minibatch from an empty dataset")
    idx = rng.integers(0, n, size=batch_size)
    return samples[idx]
