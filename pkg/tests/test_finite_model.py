from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from padic_fk.feynman_kac import Potential
from padic_fk.finite_model import (ModelSizeError, Propagator, bridge_kernel_estimate, bridge_marginal,
                                   build_model, conditional_product_moment, exact_bridge_sampler,
                                   free_kernel, free_kernel_series, hamiltonian_matrix,
                                   jump_bridge_kernel_estimate, jump_bridge_sampler, kernel_csv,
                                   spectrum_csv, trotter_kernel, vladimirov_matrix, wraparound_offset)
from padic_fk.heatkernel import HeatKernelParams, density_at_zero, density_value
from padic_fk.padic import PadicNumber
from padic_fk.process import TimeGrid
from padic_fk.rng import RngSpec


@pytest.fixture(scope="module")
def small():
    return build_model(2, 2, 2)


@pytest.fixture(scope="module")
def mid():
    return build_model(2, 5, 5)


def test_small_model_shape(small):
    assert small.size == 16 and small.cell_measure == 0.25
    assert Counter(small.dual_norms.tolist()) == {0.0: 1, 0.5: 1, 1.0: 2, 2.0: 4, 4.0: 8}
    assert Counter(small.norms.tolist()) == {0.0: 1, 0.5: 1, 1.0: 2, 2.0: 4, 4.0: 8}


def test_pairing_is_unitary(small):
    F = small.pairing_matrix() / np.sqrt(small.size)
    assert np.allclose(F @ F.conj().T, np.eye(small.size), atol=1e-12)


def test_element_index_round_trip(small):
    for j in range(small.size):
        assert small.index_of(small.element(j)) == j
    assert small.index_of(Fraction(4)) == 0  # 4 = p^M is zero in G
    with pytest.raises(ValueError):
        small.index_of(Fraction(1, 8))


def test_laplacian_trace_and_constants(small):
    L = vladimirov_matrix(small, 1.0)
    assert np.trace(L.matrix) == pytest.approx(42.5, abs=1e-12)
    assert np.allclose(L.matrix @ np.ones(small.size), 0, atol=1e-12)
    assert L.is_symmetric(1e-14)
    assert np.all(L.matrix[~np.eye(small.size, dtype=bool)] <= 1e-12)  # generator: off-diagonal <= 0


def test_spectrum_b2_is_squares(small):
    ev = np.sort(Propagator(small, 2.0).spectrum())
    assert np.allclose(ev, np.sort(small.dual_norms ** 2), atol=1e-10)


def test_constant_potential_factor(mid):
    c, t = 0.7, 1.3
    free = Propagator(mid, 1.0).kernel(t)
    shifted = Propagator(mid, 1.0, Potential.constant(c)).kernel(t)
    assert np.allclose(shifted, np.exp(-c * t) * free, rtol=1e-10, atol=0)


def test_propagator_properties(mid):
    V = Potential.step([(-1, 2.0), (1, 0.5)], 0.1)
    prop = Propagator(mid, 1.0, V)
    P1, P2, P3 = prop.matrix(0.4), prop.matrix(0.6), prop.matrix(1.0)
    assert np.max(np.abs(P1 @ P2 - P3)) < 1e-9
    assert np.max(np.abs(P3 - P3.T)) < 1e-12
    assert P3.min() > 0
    free = Propagator(mid, 1.0).matrix(1.0)
    assert np.max(np.abs(free.sum(axis=1) - 1)) < 1e-10
    assert np.all(P3.sum(axis=1) <= 1 + 1e-12)
    assert np.allclose(prop.kernel_row(1.0, 7), prop.kernel(1.0)[7], rtol=1e-12)


def test_series_matches_fft(mid):
    for b, t in ((0.5, 0.1), (1.0, 1.0), (2.0, 10.0)):
        assert np.max(np.abs(free_kernel(mid, b, t) - free_kernel_series(mid, b, t))) < 1e-10


@pytest.mark.parametrize("b,t", [(0.5, 0.1), (1.0, 1.0), (2.0, 10.0)])
def test_kernel_equals_continuum_after_wraparound(mid, b, t):
    prm = HeatKernelParams.standard(2, t, b)
    k = free_kernel(mid, b, t)
    off = wraparound_offset(2, mid.N, b, t)
    for s in range(-mid.M + 1, mid.N + 1):
        j = int(np.flatnonzero(mid.radius_exponents == s)[0])
        assert abs(k[j] - off - density_value(prm, s)) < 1e-10


def test_convergence_as_window_grows():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    errs = []
    for N in (3, 5, 7):
        m = build_model(2, N, 7)
        errs.append(abs(free_kernel(m, 1.0, 1.0)[0] - density_at_zero(prm)))
    assert errs == sorted(errs, reverse=True) and errs[-1] < errs[0] / 10


def test_size_cap():
    with pytest.raises(ModelSizeError):
        build_model(2, 9, 9)
    assert build_model(3, 1, 1).size == 9


def test_hamiltonian_is_symmetric(mid):
    H = hamiltonian_matrix(mid, 1.5, Potential.indicator(0, 3.0))
    assert H.is_symmetric(1e-13)


def test_trotter_converges_monotonically(mid):
    V = Potential.indicator(0, 1.0)
    exact = Propagator(mid, 1.0, V).kernel(1.0)[0, 0]
    errs = [abs(trotter_kernel(mid, 1.0, V, 1.0, M)[0, 0] - exact) for M in (4, 8, 16, 32)]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-3 * exact
    free = trotter_kernel(mid, 1.0, Potential.zero(), 1.0, 4)
    assert np.allclose(free[0], free_kernel(mid, 1.0, 1.0), rtol=1e-10)


def _pooled_chisquare(counts, probs, min_expected=20):
    exp = probs * counts.sum()
    keep = exp >= min_expected
    obs = np.append(counts[keep], counts[~keep].sum())
    e = np.append(exp[keep], exp[~keep].sum())
    if e[-1] == 0:
        obs, e = obs[:-1], e[:-1]
    return stats.chisquare(obs, e).pvalue


def test_bridge_marginal_matches_formula():
    m = build_model(2, 3, 3)
    x, y, T = 0, m.index_of(Fraction(1, 2)), 1.0
    grid = TimeGrid(T, 8)
    batch = exact_bridge_sampler(m, 1.0, x, y, T, grid, RngSpec(4), 100000)
    assert np.all(batch.indices[:, 0] == x) and np.all(batch.indices[:, -1] == y)
    for j in (1, 4, 7):
        assert _pooled_chisquare(batch.marginal(j), bridge_marginal(m, 1.0, x, y, T, grid.nodes[j])) > 1e-3


def test_bridge_time_reversal():
    m = build_model(3, 2, 2)
    x, y, T = 1, 5, 2.0
    for t in (0.3, 1.0, 1.7):
        assert np.allclose(bridge_marginal(m, 1.0, x, y, T, t), bridge_marginal(m, 1.0, y, x, T, T - t),
                           atol=1e-14)
    grid = TimeGrid(T, 4)
    fwd = exact_bridge_sampler(m, 1.0, x, y, T, grid, RngSpec(1), 40000)
    bwd = exact_bridge_sampler(m, 1.0, y, x, T, grid, RngSpec(2), 40000)
    table = np.vstack([fwd.marginal(1), bwd.marginal(3)])
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_bridge_reproducible_across_threads():
    m = build_model(2, 3, 3)
    grid = TimeGrid(1.0, 4)
    runs = [exact_bridge_sampler(m, 1.0, 0, 3, 1.0, grid, RngSpec(6), 10000, threads=k).indices
            for k in (1, 2, 8)]
    assert all(np.array_equal(runs[0], r) for r in runs[1:])


def test_bridge_path_view():
    m = build_model(2, 3, 3)
    batch = exact_bridge_sampler(m, 1.0, 0, 3, 1.0, TimeGrid(1.0, 4), RngSpec(6), 10)
    path = batch.path(0)
    assert path.node(0)[0].is_zero
    assert path.node(4)[0] == PadicNumber.from_rational(Fraction(3, 8), 2)


def test_bridge_kernel_estimate():
    m = build_model(2, 4, 4)
    V = Potential.step([(-1, 1.5), (1, 0.5)])
    est = bridge_kernel_estimate(m, 1.0, V, 0, 3, 1.0, 8, RngSpec(9), 50000)
    trot = trotter_kernel(m, 1.0, V, 1.0, 8)[0, 3]
    assert abs(est.estimate - trot) < 3 * est.stderr
    # left-rule bias is first order in the step: it halves when M doubles
    gaps = [est.oracle - trotter_kernel(m, 1.0, V, 1.0, M)[0, 3] for M in (8, 16, 32)]
    assert all(0.4 < b / a < 0.6 for a, b in zip(gaps, gaps[1:]))


def test_jump_bridge_marginals():
    m = build_model(2, 3, 3)
    batch = jump_bridge_sampler(m, 1.0, 0, 4, 1.0, RngSpec(1), 100000)
    assert np.all(batch.state_at(0.0) == 0) and np.all(batch.state_at(1.0) == 4)
    for t in (0.1, 0.5, 0.9):
        assert _pooled_chisquare(np.bincount(batch.state_at(t), minlength=m.size),
                                 bridge_marginal(m, 1.0, 0, 4, 1.0, t)) > 1e-3


def test_jump_bridge_potential_integral():
    m = build_model(3, 2, 2)
    batch = jump_bridge_sampler(m, 1.0, 1, 2, 1.5, RngSpec(3), 500)
    assert np.allclose(batch.potential_integral(Potential.constant(2.0)), 3.0)
    assert np.all(batch.potential_integral(Potential.zero()) == 0)


def test_jump_bridge_estimate_is_unbiased():
    m = build_model(3, 2, 2)
    V = Potential.step([(-1, 1.5), (1, 0.5)])
    est = jump_bridge_kernel_estimate(m, 1.0, V, 0, 3, 1.0, RngSpec(9), 50000)
    assert est.z < 3


def test_jump_bridge_reproducible_and_capped():
    m = build_model(2, 3, 3)
    runs = [jump_bridge_sampler(m, 1.0, 0, 3, 1.0, RngSpec(6), 9000, threads=k).states for k in (1, 2, 8)]
    assert all(np.array_equal(runs[0], r) for r in runs[1:])
    with pytest.raises(ModelSizeError):
        jump_bridge_sampler(build_model(2, 6, 6), 1.0, 0, 0, 1.0, RngSpec(1))


def test_conditional_moment_bound_constant():
    m = build_model(2, 6, 6)
    consts = [conditional_product_moment(m, 1.0, 0.6, s, 2 * s, 3 * s, 10.0, 3).bound_constant
              for s in (0.01, 0.03, 0.1, 0.3, 1.0, 3.0)]
    assert all(c > 0 for c in consts)
    assert max(consts) / min(consts) < 4
    with pytest.raises(ValueError):
        conditional_product_moment(m, 1.0, 0.6, 0.5, 0.4, 0.6, 1.0, 0)


def test_conditional_moment_brute_force():
    m = build_model(2, 2, 2)
    t1, t2, t3, T, z, k = 0.2, 0.5, 0.9, 1.3, 5, 0.7
    P = lambda t: Propagator(m, 1.0).matrix(t)
    nk = m.norms ** k
    S = m.size
    D = lambda: nk[(np.arange(S)[None, :] - np.arange(S)[:, None]) % S]
    A, B, C, E = P(t1), P(t2 - t1), P(t3 - t2), P(T - t3)
    num = (A[0] @ ((B * D()) @ ((C * D()) @ E[:, z])))
    ref = num / P(T)[0, z]
    assert conditional_product_moment(m, 1.0, k, t1, t2, t3, T, z).value == pytest.approx(ref, rel=1e-10)


def test_csv_outputs(small):
    prop = Propagator(small, 1.0)
    text = spectrum_csv(prop.spectrum())
    assert text.splitlines()[0] == "index,eigenvalue" and len(text.splitlines()) == 17
    rows = kernel_csv(prop.kernel(1.0), rows=np.array([0])).splitlines()
    assert rows[0] == "x_index,y_index,K" and len(rows) == 17 and rows[1].startswith("0,0,")
