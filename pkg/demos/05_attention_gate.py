"""
Anatomy of the weighted attention gate
======================================

Each decoder skip connection in the conditional U-Net passes through

    out = skip * psi^2 + w * phi(cond)

where psi = sigmoid(W_psi . relu(W_g gate + W_x skip)) is a learned,
spatially resolved agreement score and phi is a 1x1 projection of the
condition features. Two limits matter:

  psi -> 1: the skip passes through untouched (plus the cond term)
  w  ->  0: the condition is cut out of the network entirely

The second limit is exact: with w = 0 the output is bitwise independent
of the condition image.
"""

import numpy as np

from clab import NetConfig, WagConfig, WeightedAttentionGate, build_conditional_unet
from clab import autodiff as ad

rng = np.random.default_rng(0)

# --- the gate in isolation ---------------------------------------------
gate = WeightedAttentionGate(skip_ch=8, gate_ch=8, cond_ch=8, cfg=WagConfig(w=0.8), rng=rng)
for p in gate.parameters():
    p.data = (np.random.default_rng(1).standard_normal(p.data.shape) * 0.3).astype(np.float32)

skip = ad.as_tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))
dec = ad.as_tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))
cond = ad.as_tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))

m = gate.attention_map(skip, dec)
print(f"attention map m = psi^2 over a 6x6 grid: min {m.min():.3f}, max {m.max():.3f}")
print(f"m in [0, 1]: {bool(np.all((m >= 0) & (m <= 1)))}")
print(f"m <= psi everywhere (squaring sharpens): {bool(np.all(m <= np.sqrt(m) + 1e-7))}")
print()

# saturate psi by hand: huge positive bias drives the sigmoid to exactly 1
gate.psi.weight.data[:] = 0
gate.psi.bias.data[:] = 40.0
out = gate(skip, dec, cond).data
phi_only = gate(ad.as_tensor(np.zeros_like(skip.data)), dec, cond).data
print("with psi forced to 1 the gate reduces to skip + 0.8 * phi(cond):")
print(f"  max |out - skip - 0.8 phi(cond)| = {np.abs(out - skip.data - phi_only).max():.2e}")
print()

# --- w = 0 cuts the condition out of the full network ------------------
net_cfg = NetConfig(res_blocks_per_stage=1, base_channels=8,
                    channel_multipliers=(1, 2), attention_resolutions=())
net = build_conditional_unet(net_cfg, WagConfig(w=0.0), rng=np.random.default_rng(5))
x = rng.standard_normal((2, 1, 16, 16)).astype(np.float32)
sigma = np.array([1.0, 5.0])
cond_a = rng.standard_normal((2, 1, 16, 16)).astype(np.float32)
cond_b = rng.standard_normal((2, 1, 16, 16)).astype(np.float32)

with ad.no_grad():
    out_a = net(ad.as_tensor(x), sigma, ad.as_tensor(cond_a)).data
    out_b = net(ad.as_tensor(x), sigma, ad.as_tensor(cond_b)).data
print(f"w=0: bitwise identical outputs under two different conditions: "
      f"{bool(np.array_equal(out_a, out_b))}")

net8 = build_conditional_unet(net_cfg, WagConfig(w=0.8), rng=np.random.default_rng(5))
# fresh random params so phi projections are not still zero-initialized
for p in net8.parameters():
    p.data = (np.random.default_rng(6).standard_normal(p.data.shape) * 0.05).astype(p.data.dtype)
with ad.no_grad():
    out_a8 = net8(ad.as_tensor(x), sigma, ad.as_tensor(cond_a)).data
    out_b8 = net8(ad.as_tensor(x), sigma, ad.as_tensor(cond_b)).data
print(f"w=0.8: max output difference under the same swap: {np.abs(out_a8 - out_b8).max():.3f}")
