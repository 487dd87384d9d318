"""Command-line entry point.

Verbs: train, sample, denoise, inspect-schedule, ablate, eval.
Exit codes: 0 success, 2 usage/config error, 3 runtime failure.
Set CLAB_THREADS to cap BLAS thread counts (read at import).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import checkpoint as ckpt_mod
from .config import (
    Config,
    ConfigError,
    build_model_from,
    parse_overrides,
    preset_config,
    train_config_from,
    unknown_keys,
)
from .consistency import ConsistencyFunction, multi_step_sample
from .data import (
    _load_one_image,
    gen_gauss2d,
    gen_phantoms,
    load_image_dir,
    mode_centers,
    phantom_arrays,
    write_pgm,
)
from .metrics import (
    MetricReport,
    metric_csv,
    mode_histogram,
    psnr,
    schedule_report,
    sliced_wasserstein,
    ssim,
)
from .schedules import karras_grid
from .train import TrainingDiverged, train_loop

ABLATION_CURRICULA = ("improved", "sinusoidal")
ABLATION_SAMPLERS = ("lognormal", "beta")


def _seeded(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFF, stream]))


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _from_uint8(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def _task(cfg: Config) -> str:
    task = cfg.get("task")
    if task:
        return task
    kind = cfg.get("data.kind", "gauss2d")
    return {"gauss2d": "toy2d", "phantom": "phantom64", "image_dir": "image32"}[kind]


def _assemble_config(args) -> Config:
    cfg = Config()
    if getattr(args, "preset", None):
        cfg = cfg.merged(preset_config(args.preset))
    if getattr(args, "config", None):
        cfg = cfg.merged(Config.from_file(args.config))
    if getattr(args, "override", None):
        cfg = cfg.merged(parse_overrides(args.override))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.merged({"seed": str(args.seed)})
    if not cfg.values:
        raise ConfigError("no configuration given; use --preset and/or --config")
    bad = unknown_keys(cfg)
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join(bad)}")
    return cfg


def _build_task_data(cfg: Config, seed: int) -> dict:
    """Materialize train/eval arrays for the configured task."""
    task = _task(cfg)
    gen_rng = _seeded(seed, 1001)
    eval_rng = _seeded(seed, 1002)
    if task == "toy2d":
        n = cfg.get_int("data.n", 4096)
        modes = cfg.get_int("data.modes", 8)
        eval_n = cfg.get_int("eval.samples", 2048)
        train = gen_gauss2d(n, modes, gen_rng).samples
        holdout = gen_gauss2d(eval_n, modes, eval_rng).samples
        return {
            "task": task, "train": train, "cond": None, "holdout": holdout,
            "centers": mode_centers(modes), "sample_shape": (2,), "in_dim": 2,
            "in_channels": 0, "input_res": 0,
        }
    if task == "phantom64":
        n = cfg.get_int("data.n", 256)
        size = cfg.get_int("data.size", 64)
        ell = cfg.get_ints("data.ellipses", (2, 5))
        sigma_dose = cfg.get_float("data.sigma_dose", 0.15)
        eval_n = cfg.get_int("eval.samples", 16)
        clean, low = phantom_arrays(gen_phantoms(n, size, (ell[0], ell[-1]), gen_rng, sigma_dose))
        ev_clean, ev_low = phantom_arrays(
            gen_phantoms(eval_n, size, (ell[0], ell[-1]), eval_rng, sigma_dose)
        )
        return {
            "task": task, "train": clean, "cond": low,
            "eval_clean": ev_clean, "eval_low": ev_low,
            "sample_shape": (1, size, size), "in_dim": 2,
            "in_channels": 1, "input_res": size,
        }
    if task == "image32":
        size = cfg.get_int("data.size", 32)
        ds = load_image_dir(cfg.require("data.dir"), size)
        eval_n = min(cfg.get_int("eval.samples", 64), max(1, len(ds) // 4))
        train = ds.samples[:-eval_n] if len(ds) > eval_n else ds.samples
        holdout = ds.samples[-eval_n:]
        c = ds.samples.shape[1]
        return {
            "task": task, "train": train, "cond": None, "holdout": holdout,
            "sample_shape": (c, size, size), "in_dim": 2,
            "in_channels": c, "input_res": size,
        }
    raise ConfigError(f"unknown task {task!r}")


def _build_model(cfg: Config, data: dict, seed: int):
    return build_model_from(
        cfg, _seeded(seed, 2001), in_channels=max(data["in_channels"], 1),
        input_res=data["input_res"], in_dim=data["in_dim"],
    )


def _consistency_fn(net, tc) -> ConsistencyFunction:
    return ConsistencyFunction(net, tc.scalings, tc.noise_range.sigma_min, tc.noise_range.sigma_max)


def _nfe_sigmas(noise_range, nfe: int) -> np.ndarray:
    return karras_grid(noise_range, nfe + 1).sigmas[1:][::-1].copy()


def _sample_many(f: ConsistencyFunction, shape: tuple, n: int, nfe: int,
                 rng: np.random.Generator, noise_range, cond=None) -> np.ndarray:
    chunk = 256 if len(shape) == 1 else 8
    outs = []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        z = rng.standard_normal((m,) + shape).astype(np.float32)
        c = cond[start : start + m] if cond is not None else None
        if nfe <= 1:
            x = f(f.sigma_max * z, f.sigma_max, cond=c)
        else:
            x = multi_step_sample(f, _nfe_sigmas(noise_range, nfe), z, rng, cond=c)
        outs.append(x)
    return np.concatenate(outs) if outs else np.zeros((0,) + shape, dtype=np.float32)


def _final_metrics(cfg: Config, tc, net, data: dict) -> list[MetricReport]:
    """Post-training metrics per task; also used by the ablation harness."""
    f = _consistency_fn(net, tc)
    h = cfg.hash()
    proj = cfg.get_int("eval.projections", 128)
    rows: list[MetricReport] = []
    if data["task"] in ("toy2d", "image32"):
        holdout = data["holdout"]
        eval_n = holdout.shape[0]
        samples = _sample_many(f, data["sample_shape"], eval_n, 1, _seeded(tc.seed, 3001), tc.noise_range)
        sw_model = sliced_wasserstein(samples, holdout, proj, _seeded(tc.seed, 3002))
        # Average the train-vs-holdout distance over disjoint train slices so
        # the reference does not hinge on one lucky draw.
        train = data["train"]
        n_slices = max(1, min(8, train.shape[0] // eval_n))
        sw_base = float(np.mean([
            sliced_wasserstein(train[i * eval_n:(i + 1) * eval_n], holdout, proj, _seeded(tc.seed, 3002))
            for i in range(n_slices)
        ]))
        rows += [
            MetricReport("sw2_nfe1", sw_model, eval_n, h),
            MetricReport("sw2_baseline", sw_base, eval_n, h),
        ]
        if data["task"] == "toy2d":
            hist = mode_histogram(samples, data["centers"])
            rows.append(MetricReport("mode_min_fraction", float(hist.min() / hist.sum()), eval_n, h))
    else:
        ev_clean, ev_low = data["eval_clean"], data["eval_low"]
        eval_n = ev_clean.shape[0]
        z_rng = _seeded(tc.seed, 3003)
        z = z_rng.standard_normal(ev_low.shape).astype(np.float32)
        den = _denoise_batch(f, ev_low, z)
        ps_d, ps_l, ss_d, ss_l = [], [], [], []
        for i in range(eval_n):
            ps_d.append(psnr(den[i, 0], ev_clean[i, 0], 2.0))
            ps_l.append(psnr(ev_low[i, 0], ev_clean[i, 0], 2.0))
            ss_d.append(ssim(den[i, 0], ev_clean[i, 0]))
            ss_l.append(ssim(ev_low[i, 0], ev_clean[i, 0]))
        rows += [
            MetricReport("psnr_denoised", float(np.mean(ps_d)), eval_n, h),
            MetricReport("psnr_low_dose", float(np.mean(ps_l)), eval_n, h),
            MetricReport("ssim_denoised", float(np.mean(ss_d)), eval_n, h),
            MetricReport("ssim_low_dose", float(np.mean(ss_l)), eval_n, h),
        ]
    return rows


def _denoise_batch(f: ConsistencyFunction, cond: np.ndarray, z: np.ndarray, chunk: int = 8) -> np.ndarray:
    outs = []
    for start in range(0, cond.shape[0], chunk):
        c = cond[start : start + chunk]
        zz = z[start : start + chunk]
        outs.append(f(f.sigma_max * zz, f.sigma_max, cond=c))
    return np.concatenate(outs)


# ---------------------------------------------------------------------------
# Verbs.


def cmd_train(args) -> int:
    cfg = _assemble_config(args)
    tc = train_config_from(cfg)
    data = _build_task_data(cfg, tc.seed)
    net = _build_model(cfg, data, tc.seed)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    every = max(1, tc.total_steps // 20) if tc.total_steps else 1

    def progress(rec):
        if rec.step % every == 0 or rec.step + 1 == tc.total_steps:
            print(f"step={rec.step} n={rec.n} loss={rec.loss:.5f} "
                  f"sigma_mean={rec.sigma_mean:.2f} hi_frac={rec.sigma_max_frac:.3f}",
                  file=sys.stderr)

    stored = dict(cfg.values)
    if data["in_channels"]:
        stored["data.channels"] = str(data["in_channels"])
    result = train_loop(
        tc, net, data["train"], cond=data["cond"], out_dir=out_dir, resume=args.resume,
        progress=progress, extra_meta={"config": stored, "config_hash": cfg.hash()},
    )
    reports = _final_metrics(cfg, tc, net, data)
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(metric_csv(reports))
    summary = {
        "config": cfg.values,
        "config_hash": cfg.hash(),
        "steps": tc.total_steps,
        "wall_seconds": result.wall_seconds,
        "final_loss": result.runlog[-1].loss if result.runlog else None,
        "parameters": net.num_parameters(),
        "checkpoint": result.checkpoint_path,
        "metrics": {r.name: r.value for r in reports},
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    for r in reports:
        print(f"{r.name} = {r.value:.6g}")
    print(f"done: {tc.total_steps} steps in {result.wall_seconds:.1f}s -> {out_dir}")
    return 0


def _shape_info(cfg: Config) -> dict:
    """Shape bookkeeping for model rebuild, without touching any data."""
    task = _task(cfg)
    if task == "toy2d":
        return {"task": task, "in_channels": 0, "input_res": 0, "in_dim": 2, "sample_shape": (2,)}
    size = cfg.get_int("data.size", 64 if task == "phantom64" else 32)
    c = cfg.get_int("data.channels", 1)
    return {"task": task, "in_channels": c, "input_res": size, "in_dim": 2,
            "sample_shape": (c, size, size)}


def _load_checkpoint_model(path):
    """Rebuild the network a checkpoint was trained with and load its weights."""
    from .train import load_model_params

    model, meta = load_model_params(path)
    if "config" not in meta:
        raise ckpt_mod.CheckpointError(f"{path}: checkpoint carries no config; cannot rebuild model")
    cfg = Config(meta["config"])
    seed = cfg.get_int("seed", 0)
    data = _shape_info(cfg)
    net = _build_model(cfg, data, seed)
    expected = {name: tuple(p.data.shape) for name, p in net.named_parameters()}
    found = {k: v for k, v in model.items()}
    diff = ckpt_mod.manifest_diff(expected, found)
    if diff:
        raise ckpt_mod.CheckpointError(
            f"{path}: incompatible checkpoint:\n  " + "\n  ".join(diff)
        )
    net.load_state_dict(model)
    return net, cfg, data, meta


def cmd_sample(args) -> int:
    net, cfg, data, _meta = _load_checkpoint_model(args.ckpt)
    tc = train_config_from(cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.n == 0:
        return 0
    f = _consistency_fn(net, tc)
    rng = _seeded(args.seed, 4001)
    cond = None
    if cfg.get("model.kind") == "cond_unet":
        # conditional models sample against freshly generated low-dose inputs
        size = cfg.get_int("data.size", 64)
        ell = cfg.get_ints("data.ellipses", (2, 5))
        pairs = gen_phantoms(args.n, size, (ell[0], ell[-1]), _seeded(args.seed, 4002),
                             cfg.get_float("data.sigma_dose", 0.15))
        _, cond = phantom_arrays(pairs)
    samples = _sample_many(f, data["sample_shape"], args.n, args.nfe, rng, tc.noise_range, cond=cond)
    if len(data["sample_shape"]) == 1:
        path = os.path.join(args.out, "samples.csv")
        with open(path, "w") as fh:
            fh.write("x,y\n")
            for row in samples:
                fh.write(f"{row[0]:.8g},{row[1]:.8g}\n")
        print(f"wrote {samples.shape[0]} points -> {path}")
    else:
        for i in range(samples.shape[0]):
            img = samples[i, 0] if samples.shape[1] == 1 else samples[i].mean(axis=0)
            write_pgm(os.path.join(args.out, f"sample_{i:04d}.pgm"), _to_uint8(img))
        print(f"wrote {samples.shape[0]} images -> {args.out}")
    return 0


def _gather_denoise_inputs(in_dir: str):
    """Return (paired, [(name, low_path, clean_path|None)])."""
    low_dir = os.path.join(in_dir, "low")
    clean_dir = os.path.join(in_dir, "clean")
    exts = (".pgm", ".png")
    if os.path.isdir(low_dir):
        names = sorted(f for f in os.listdir(low_dir) if f.lower().endswith(exts))
        out = []
        for name in names:
            clean = os.path.join(clean_dir, name)
            out.append((name, os.path.join(low_dir, name), clean if os.path.exists(clean) else None))
        return True, out
    names = sorted(f for f in os.listdir(in_dir) if f.lower().endswith(exts))
    return False, [(name, os.path.join(in_dir, name), None) for name in names]


def cmd_denoise(args) -> int:
    net, cfg, _data, _meta = _load_checkpoint_model(args.ckpt)
    if cfg.get("model.kind") != "cond_unet":
        raise ConfigError("denoise needs a conditional (cond_unet) checkpoint")
    tc = train_config_from(cfg)
    f = _consistency_fn(net, tc)
    size = cfg.get_int("data.size", 64)
    paired, files = _gather_denoise_inputs(args.input)
    if not files:
        raise RuntimeError(f"{args.input}: empty dataset (no PGM/PNG inputs)")
    os.makedirs(args.out, exist_ok=True)
    reports: list[MetricReport] = []
    ps_d, ps_l, ss_d, ss_l = [], [], [], []
    h = cfg.hash()
    n_done = 0
    for name, low_path, clean_path in files:
        raw = _load_one_image(low_path)
        if raw.ndim != 2 or raw.shape != (size, size):
            print(f"warning: {low_path}: size {raw.shape} != model size ({size}, {size}); skipped",
                  file=sys.stderr)
            continue
        low = _from_uint8(raw)
        file_seed = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
        z = _seeded(args.seed, file_seed).standard_normal((1, 1, size, size)).astype(np.float32)
        den = f(f.sigma_max * z, f.sigma_max, cond=low[None, None])[0, 0]
        stem = os.path.splitext(name)[0]
        write_pgm(os.path.join(args.out, f"denoised_{stem}.pgm"), _to_uint8(den))
        n_done += 1
        if clean_path is not None:
            clean = _from_uint8(_load_one_image(clean_path))
            ps_d.append(psnr(den, clean, 2.0))
            ps_l.append(psnr(low, clean, 2.0))
            ss_d.append(ssim(den, clean))
            ss_l.append(ssim(low, clean))
            reports.append(MetricReport(f"psnr_denoised[{name}]", ps_d[-1], 1, h))
    if n_done == 0:
        raise RuntimeError(f"{args.input}: no usable inputs (all skipped)")
    if paired and ps_d:
        reports += [
            MetricReport("psnr_denoised", float(np.mean(ps_d)), len(ps_d), h),
            MetricReport("psnr_low_dose", float(np.mean(ps_l)), len(ps_l), h),
            MetricReport("ssim_denoised", float(np.mean(ss_d)), len(ss_d), h),
            MetricReport("ssim_low_dose", float(np.mean(ss_l)), len(ss_l), h),
        ]
    if reports:
        with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
            fh.write(metric_csv(reports))
        for r in reports[-4:]:
            print(f"{r.name} = {r.value:.4f}")
    print(f"denoised {n_done} images -> {args.out}")
    return 0


def cmd_inspect_schedule(args) -> int:
    cfg = _assemble_config(args)
    tc = train_config_from(cfg)
    rep = schedule_report(tc, n_draws=args.draws, rng=_seeded(tc.seed, 5001),
                          config_hash=cfg.hash(), step_stride=args.stride)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "curriculum.csv"), "w") as fh:
        fh.write(rep.curriculum_csv())
    for k in rep.pmf_tables:
        with open(os.path.join(args.out, f"pmf_step{k:06d}.csv"), "w") as fh:
            fh.write(rep.pmf_csv(k))
    summary = rep.summary_csv()
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def cmd_ablate(args) -> int:
    base = _assemble_config(args)
    if _task(base) != "toy2d":
        raise ConfigError("ablate runs the 2D toy task; give a toy2d base config")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    digests: dict[str, list[str]] = {}
    results: dict[str, float] = {}
    for curr in ABLATION_CURRICULA:
        for samp in ABLATION_SAMPLERS:
            cell = f"{curr}_{samp}"
            cell_dir = os.path.join(args.out, f"cell_{cell}")
            cfg = base.merged({"curriculum.kind": curr, "level_sampler": samp})
            try:
                tc = train_config_from(cfg)
                data = _build_task_data(cfg, tc.seed)
                net = _build_model(cfg, data, tc.seed)
                result = train_loop(tc, net, data["train"], cond=data["cond"], out_dir=cell_dir,
                                    extra_meta={"config": cfg.values})
                digests[cell] = result.batch_digests
                reports = _final_metrics(cfg, tc, net, data)
                vals = {r.name: r.value for r in reports}
                results[cell] = vals["sw2_nfe1"]
                rows.append(f"{curr},{samp},ok,{vals['sw2_nfe1']:.8g},{result.runlog[-1].loss:.8g}")
                print(f"cell {cell}: sw2_nfe1={vals['sw2_nfe1']:.5f}")
            except Exception as e:  # cell isolation: one failure must not kill the grid
                rows.append(f"{curr},{samp},failed: {e},,")
                print(f"cell {cell} failed: {e}", file=sys.stderr)
    csv = "curriculum,level_sampler,status,sw2_nfe1,final_loss\n" + "\n".join(rows) + "\n"
    with open(os.path.join(args.out, "comparison.csv"), "w") as fh:
        fh.write(csv)
    ok_digests = [d for d in digests.values() if d]
    if len(ok_digests) > 1 and any(d != ok_digests[0] for d in ok_digests[1:]):
        raise RuntimeError("shared-seed batches differ across ablation cells")
    if results:
        best = min(results, key=results.get)
        print(f"best cell: {best} (sinusoidal_beta best: {best == 'sinusoidal_beta'})")
    print(csv, end="")
    return 0


def _read_point_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                continue  # header
    if not rows:
        raise RuntimeError(f"{path}: no numeric rows")
    return np.asarray(rows, dtype=np.float64)


def _read_image_dir_uint8(path: str) -> dict[str, np.ndarray]:
    exts = (".pgm", ".png")
    out = {}
    for name in sorted(os.listdir(path)):
        if name.lower().endswith(exts):
            out[name] = _load_one_image(os.path.join(path, name))
    if not out:
        raise RuntimeError(f"{path}: empty dataset (no PGM/PNG files)")
    return out


def cmd_eval(args) -> int:
    h = hashlib.sha256(f"{args.a}|{args.b}".encode()).hexdigest()[:12]
    rng = _seeded(args.seed, 6001)
    reports: list[MetricReport] = []
    if os.path.isdir(args.a) and os.path.isdir(args.b):
        imgs_a = _read_image_dir_uint8(args.a)
        imgs_b = _read_image_dir_uint8(args.b)
        common = sorted(set(imgs_a) & set(imgs_b))
        if common:
            ps, ss = [], []
            for name in common:
                a = _from_uint8(imgs_a[name])
                b = _from_uint8(imgs_b[name])
                if a.shape != b.shape:
                    print(f"warning: {name}: shape mismatch, skipped", file=sys.stderr)
                    continue
                ps.append(psnr(a, b, 2.0))
                ss.append(ssim(a, b))
            if ps:
                finite = [p for p in ps if math.isfinite(p)]
                mean_psnr = float(np.mean(finite)) if finite else math.inf
                reports.append(MetricReport("psnr_mean", mean_psnr, len(ps), h))
                reports.append(MetricReport("ssim_mean", float(np.mean(ss)), len(ss), h))
        set_a = np.stack([_from_uint8(v) for v in imgs_a.values()]).reshape(len(imgs_a), -1)
        set_b = np.stack([_from_uint8(v) for v in imgs_b.values()]).reshape(len(imgs_b), -1)
        if set_a.shape[1] == set_b.shape[1]:
            reports.append(MetricReport(
                "sw2_pixels", sliced_wasserstein(set_a, set_b, args.projections, rng),
                min(len(imgs_a), len(imgs_b)), h))
    elif os.path.isfile(args.a) and os.path.isfile(args.b):
        pts_a = _read_point_csv(args.a)
        pts_b = _read_point_csv(args.b)
        reports.append(MetricReport(
            "sw2", sliced_wasserstein(pts_a, pts_b, args.projections, rng),
            min(pts_a.shape[0], pts_b.shape[0]), h))
    else:
        raise ConfigError("eval needs two CSV files or two image directories")
    csv = metric_csv(reports)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
            fh.write(csv)
    print(csv, end="")
    return 0


# ---------------------------------------------------------------------------
# Argument plumbing.


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--preset", choices=sorted(["toy2d", "phantom64", "image32"]),
                   help="built-in starting config")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL",
                   help="config override, repeatable; wins over --config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="clab",
        description="Consistency-model training laboratory (CPU, desk scale).",
        epilog="Environment: CLAB_THREADS caps BLAS/OpenMP threads.",
    )
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a model per config")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="resume from newest checkpoint in --out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=16, help="number of samples")
    p.add_argument("--nfe", type=int, default=1, help="function evaluations per sample")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("denoise", help="single-step denoise a directory of images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True,
                   help="directory of images, or a directory with low/ and clean/ subdirs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_denoise)

    p = sub.add_parser("inspect-schedule", help="emit curriculum and level-sampling tables")
    _add_config_flags(p)
    p.add_argument("--out", default="schedule-report")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--stride", type=int, default=1, help="step stride for curriculum.csv")
    p.set_defaults(fn=cmd_inspect_schedule)

    p = sub.add_parser("ablate", help="run the curriculum x noise-distribution grid")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("eval", help="metrics between two sample sets (CSV files or image dirs)")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--projections", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDiverged, ckpt_mod.CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
