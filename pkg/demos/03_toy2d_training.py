"""
Single-step generation on a 2D ring of Gaussians
================================================

End-to-end consistency training at desk scale: an MLP learns the
8-mode ring mixture, then generates fresh points in ONE network
evaluation. Quality is scored with the sliced Wasserstein-2 distance
against held-out data, with the distance between two independent real
draws as the noise floor.

Runs in well under a minute on a laptop CPU.
"""

import numpy as np

from clab import (
    ConsistencyFunction,
    CurriculumConfig,
    HighNoiseInjection,
    TrainConfig,
    build_mlp,
    gen_gauss2d,
    mode_histogram,
    single_step_sample,
    sliced_wasserstein,
    train_loop,
)

MODES = 8
data = gen_gauss2d(16_384, MODES, np.random.default_rng(7))

cfg = TrainConfig(
    total_steps=8000,
    batch_size=256,
    learning_rate=3e-4,
    grid_kind="karras",
    level_sampler="beta",
    curriculum=CurriculumConfig(kind="sinusoidal", s0=20, s1=150),
    injection=HighNoiseInjection(ratio=0.01, low=40.0, high=80.0),
    huber_c=0.03,
    grad_clip=1.0,
    seed=0,
)
net = build_mlp((128, 128, 128), in_dim=2, rng=np.random.default_rng(0))
print(f"training {net.num_parameters()} parameters for {cfg.total_steps} steps ...")
result = train_loop(cfg, net, data)
losses = [r.loss for r in result.runlog]
print(f"done in {result.wall_seconds:.1f}s; loss {np.mean(losses[:100]):.4f} -> {np.mean(losses[-100:]):.4f}")
print()

# sample with a single network evaluation (NFE = 1), scored from the EMA weights
f = ConsistencyFunction(net)
net.load_state_dict(result.state.ema)
eval_rng = np.random.default_rng(99)
z = eval_rng.standard_normal((2048, 2)).astype(np.float32)
samples = single_step_sample(f, z)

held_out = gen_gauss2d(2048, MODES, np.random.default_rng(8)).samples
second_draw = gen_gauss2d(2048, MODES, np.random.default_rng(9)).samples
sw2 = sliced_wasserstein(samples, held_out, 256, np.random.default_rng(0))
floor = sliced_wasserstein(second_draw, held_out, 256, np.random.default_rng(0))
print(f"SW2(model, data)  = {sw2:.4f}")
print(f"SW2(data, data)   = {floor:.4f}   (sampling noise floor)")
print()

# every mode of the ring should receive a reasonable share of samples
angles = 2 * np.pi * np.arange(MODES) / MODES
centers = 0.7 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
hist = mode_histogram(samples, centers)
frac = hist / hist.sum()
print("per-mode sample fractions (ideal 0.125):")
print("  " + " ".join(f"{x:.3f}" for x in frac))
print(f"weakest mode holds {frac.min():.1%} of the samples")
