"""Exact bridges on the finite group and the bridge form of the kernel.

Continuous-time bridges from x to y are drawn by uniformization, the
potential is integrated exactly along each path, and the bridge average of
exp(-int V) times the free kernel reproduces the propagator entry.

    python demos/exact_bridges.py
"""
import numpy as np

from padic_fk.feynman_kac import Potential
from padic_fk.finite_model import bridge_marginal, build_model, jump_bridge_kernel_estimate, jump_bridge_sampler
from padic_fk.rng import RngSpec

model = build_model(2, 3, 3)
x, y, T = 0, model.index_of("1/2"), 1.0
batch = jump_bridge_sampler(model, 1.0, x, y, T, RngSpec(5), 50000)
print(f"mean number of clock events: {batch.counts.mean():.2f} (rate {batch.rate:.3f})")
for t in (0.25, 0.5, 0.75):
    emp = np.bincount(batch.state_at(t), minlength=model.size) / len(batch.counts)
    exact = bridge_marginal(model, 1.0, x, y, T, t)
    print(f"t = {t}: total variation between sampled and exact marginal = {0.5 * np.abs(emp - exact).sum():.4f}")

V = Potential.step([(-1, 2.0), (1, 0.5)])
for xi, yi in ((0, 0), (0, 3), (8, 1)):
    est = jump_bridge_kernel_estimate(model, 1.0, V, xi, yi, T, RngSpec(6, xi), 50000)
    print(f"K({xi}, {yi}): bridge {est.estimate:.6f} +- {est.stderr:.6f}, propagator {est.oracle:.6f}, z = {est.z:.2f}")
