"""Monte Carlo Feynman-Kac kernel for a step well, checked against the exact
finite-model propagator and its Trotter targets.

V = 1 on the unit ball, p = 2, b = 1, t = 1.  The estimator uses free jump
paths on a grid of M steps; its exact mean is the kernel of
(e^{-dV} e^{-d Delta})^M, which converges to e^{-tH} as M grows.

    python demos/step_well_propagator.py
"""
from padic_fk.feynman_kac import Potential, estimate_kernel
from padic_fk.finite_model import Propagator, build_model, trotter_kernel
from padic_fk.heatkernel import HeatKernelParams
from padic_fk.rng import RngSpec

V = Potential.indicator(0, 1.0)
prm = HeatKernelParams.standard(2, 1.0, 1.0)
model = build_model(2, 5, 5)
K = Propagator(model, 1.0, V).kernel(1.0)

print(f"exact K(0, 0) on the finite model: {K[0, 0]:.6f}")
for M in (4, 8, 16, 32):
    est = estimate_kernel(0, 0, 1.0, prm, V, 50000, M, RngSpec(2024, M))
    target = trotter_kernel(model, 1.0, V, 1.0, M)[0, 0]
    print(f"M = {M:2d}: MC {est.estimate:.5f} +- {est.stderr:.5f}   Trotter target {target:.6f}"
          f"   bias {target - K[0, 0]:+.2e}")
