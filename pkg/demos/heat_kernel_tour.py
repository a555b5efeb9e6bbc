"""Shell densities of the p-adic heat kernel and the moment scaling law.

Prints f_{t,b} on a few shells, checks that the radial law sums to one,
and shows E|X(p^b t)|^k = p^k E|X(t)|^k together with the log-periodic
wobble of t^{n/b} f(0).

    python demos/heat_kernel_tour.py
"""
import numpy as np

from padic_fk.heatkernel import HeatKernelParams, density_at_zero, moment, peak_constant, radial_law

p, b, t = 2, 1.0, 1.0
prm = HeatKernelParams.standard(p, t, b)
law = radial_law(prm)

print(f"f(0) = {density_at_zero(prm):.12f}")
for s in range(-3, 4):
    i = int(s - law.radii[0])
    print(f"  |x| = 2^{s:+d}:  f = {law.density[i]:.6e}   P(|X| = 2^{s:+d}) = {law.pmf[i]:.6e}")
print(f"total mass in window + lower tail = {law.pmf.sum() + law.lower_tail:.15f}")

k = 0.5
m1 = moment(prm, k)
m2 = moment(prm.at(p ** b * t), k)
print(f"\nE|X(t)|^{k} = {m1:.12f},  E|X(p^b t)|^{k} / p^k = {m2 / p ** k:.12f}")

ts = np.logspace(-2, 2, 9)
vals = [peak_constant(prm.at(float(s))) for s in ts]
print("\nt^(n/b) f(0) over four decades (bounded, period p^b in t):")
for s, v in zip(ts, vals):
    print(f"  t = {s:8.3f}   {v:.8f}")
print(f"max/min = {max(vals) / min(vals):.6f} <= p^(n/b) = {p ** (1 / b):.1f}")
