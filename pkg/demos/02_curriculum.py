"""
Discretization curricula
========================

The number of grid levels N grows over training: few levels early (large
gaps, strong learning signal per step), many levels late (small gaps, low
discretization bias). Two growth laws are implemented:

  improved    doubling ladder, N = s0+1 rising to the cap s1+1 and staying
  sinusoidal  N(k) = min(ceil(|s1 sin(3 pi k / 2K) + s0|) + 1, s1 + 1),
              deliberately NON-monotone: it hits the cap at k = K/3,
              falls back to s0+1 at 2K/3, then climbs again

The fall-and-rise tail periodically re-widens the gaps, refreshing the
learning signal late in the run. A monotone_clip switch freezes the
schedule at its first peak for ablations against a plain ramp.
"""

from clab import CurriculumConfig, improved_n, n_for_step, sinusoidal_n

K = 10_000
imp = CurriculumConfig(kind="improved", total_steps=K, s0=10, s1=160)
sin = CurriculumConfig(kind="sinusoidal", total_steps=K, s0=10, s1=160)
CAP = imp.s1 + 1

print(f"run of {K} steps, s0={imp.s0}, s1={imp.s1} (cap N = {CAP})")
print(f"{'step':>8} {'improved':>9} {'sinusoidal':>11}")
for frac in (0.0, 0.1, 1 / 3, 0.5, 2 / 3, 0.9, 1.0):
    k = min(int(frac * K), K)
    print(f"{k:>8} {improved_n(k, imp):>9} {sinusoidal_n(k, sin):>11}")
print()

# time spent at the full cap under each law
imp_full = sum(improved_n(k, imp) == CAP for k in range(K))
sin_full = sum(sinusoidal_n(k, sin) == CAP for k in range(K))
print(f"steps at the cap:  improved {imp_full} ({imp_full / K:.0%}),  "
      f"sinusoidal {sin_full} ({sin_full / K:.0%})")
print()

# the clip freezes the sinusoid at its k = K/3 peak
raw_end = sinusoidal_n(K, sin, monotone_clip=False)
clipped_end = sinusoidal_n(K, sin, monotone_clip=True)
trough = min(sinusoidal_n(k, sin) for k in range(K))
print(f"unclipped: minimum N over the run is {trough} (the negative lobe of the")
print(f"           sine cancels s0), ends at {raw_end}")
print(f"clipped:   holds the cap, ends at {clipped_end}")
print()

# n_for_step dispatches on the configured kind
for kind in ("improved", "sinusoidal", "constant"):
    c = CurriculumConfig(kind=kind, total_steps=K, s0=10, s1=160)
    print(f"n_for_step(K//2, kind={kind!r}) = {n_for_step(K // 2, c)}")
