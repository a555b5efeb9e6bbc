import math

import mpmath
import numpy as np
import pytest

from padic_fk.errors import NumericRangeError
from padic_fk.geometry import standard_profile
from padic_fk.heatkernel import (HeatKernelParams, ball_probability, density_at_zero, density_table,
                                 density_value, moment, peak_constant, radial_law, radial_window,
                                 semigroup_check)


def naive_shell(p, b, t, m, delta=0, lo=-60):
    """Direct high-cutoff sum for f(p^m) in dimension one, 40 digits."""
    with mpmath.workdps(40):
        s = mpmath.fsum(mpmath.mpf(p) ** r * (mpmath.exp(-t * mpmath.mpf(p) ** (r * b))
                                              - mpmath.exp(-t * mpmath.mpf(p) ** ((r + 1) * b)))
                        for r in range(lo, delta - m + 1))
        return float(s * mpmath.mpf(p) ** (-delta / 2))


def naive_peak(p, n, b, t, lo=-200, hi=80):
    with mpmath.workdps(40):
        return float(mpmath.fsum(mpmath.mpf(p) ** (r * n) * (1 - mpmath.mpf(p) ** -n)
                                 * mpmath.exp(-t * mpmath.mpf(p) ** (r * b)) for r in range(lo, hi)))


def test_density_matches_naive_series():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    assert abs(density_value(prm, 5) - naive_shell(2, 1.0, 1.0, 5)) < 1e-12


@pytest.mark.parametrize("p,b,t", [(2, 0.5, 0.1), (3, 2.0, 10.0), (5, 1.0, 1e-3)])
def test_density_table_matches_naive(p, b, t):
    prm = HeatKernelParams.standard(p, t, b)
    table = density_table(prm, -3, 3)
    ref = [naive_shell(p, b, t, m, lo=-400) for m in range(-3, 4)]
    assert np.allclose(table, ref, rtol=1e-11, atol=0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_peak_matches_direct_integral(n):
    prm = HeatKernelParams.standard(3, 0.7, 1.5, n)
    assert density_at_zero(prm) == pytest.approx(naive_peak(3, n, 1.5, 0.7), rel=1e-12)


def test_peak_is_limit_of_shells():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    assert density_value(prm, -60) == pytest.approx(density_at_zero(prm), rel=1e-12)


def test_peak_for_weighted_profile():
    prof = standard_profile(2, 1, (2,))
    prm = HeatKernelParams(1.0, 1.0, prof)
    # |xi| = 2|xi|_2, so for b = 1 the integrand is the unweighted one at time 2t
    assert density_at_zero(prm) == pytest.approx(naive_peak(2, 1, 1.0, 2.0), rel=1e-12)
    with pytest.raises(ValueError):
        density_value(prm, 0)


@pytest.mark.parametrize("p,n,b,t", [(2, 1, 1.0, 1.0), (3, 2, 0.5, 0.1), (2, 1, 2.0, 10.0), (5, 3, 1.0, 2.0)])
def test_positivity_and_peak_bound(p, n, b, t):
    prm = HeatKernelParams.standard(p, t, b, n)
    law = radial_law(prm)
    f0 = density_at_zero(prm)
    assert np.all(law.density > 0)
    assert np.all(law.density <= f0)  # exact: shells and peak share one running sum
    assert np.all(np.diff(law.density) <= 1e-15 * f0)  # non-increasing in |x|


@pytest.mark.parametrize("p,n,b,t", [(2, 1, 1.0, 1.0), (3, 2, 0.5, 0.1), (2, 1, 2.0, 1.0), (5, 1, 1.0, 1e3)])
def test_total_mass(p, n, b, t):
    law = radial_law(HeatKernelParams.standard(p, t, b, n))
    assert np.all(law.pmf >= 0)
    assert abs(law.pmf.sum() + law.lower_tail - 1) < 1e-10
    assert law.upper_tail < 1e-10


def test_cdf_two_ways():
    prm = HeatKernelParams.standard(2, 1.0, 2.0)
    law = radial_law(prm)
    direct = np.array([ball_probability(prm, int(s)) for s in law.radii])
    assert np.max(np.abs(law.cdf - direct)) < 1e-10


def test_pmf_is_cdf_difference():
    prm = HeatKernelParams.standard(3, 0.3, 1.0, 2)
    law = radial_law(prm)
    assert np.max(np.abs(np.diff(law.cdf) - law.pmf[1:])) < 1e-12


def test_small_time_concentrates():
    for m in (0, 3, 6):
        probs = [ball_probability(HeatKernelParams.standard(2, t, 1.0), -m) for t in (1e-2, 1e-4, 1e-8)]
        assert probs == sorted(probs) and probs[-1] > 1 - 1e-5


def test_window_doubling_changes_little():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    lo, hi = radial_window(prm, prm.eps / 2)
    a = radial_law(prm, (lo, hi))
    b = radial_law(prm, (2 * lo, 2 * hi))
    assert abs(a.pmf.sum() + a.lower_tail - b.pmf.sum() - b.lower_tail) < prm.eps
    assert np.allclose(a.density, b.density[lo - 2 * lo: lo - 2 * lo + len(a.density)], rtol=1e-13)


def test_conductor_prefactor_pattern():
    for m in range(-3, 4):
        d0 = density_value(HeatKernelParams.standard(2, 1.0, 1.0, delta=0), m - 1)
        d1 = density_value(HeatKernelParams.standard(2, 1.0, 1.0, delta=1), m)
        assert d1 == pytest.approx(2 ** -0.5 * d0, rel=1e-13)
        assert d1 == pytest.approx(naive_shell(2, 1.0, 1.0, m, delta=1), rel=1e-12)
    law = radial_law(HeatKernelParams.standard(2, 1.0, 1.0, delta=1))
    assert abs(law.pmf.sum() + law.lower_tail - 1) < 1e-10


def test_moment_zero_and_domain():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    assert moment(prm, 0.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        moment(prm, 1.0)


@pytest.mark.parametrize("p,b", [(2, 1.0), (3, 2.0), (5, 0.5)])
def test_moment_scaling(p, b):
    for k in (b / 4, b / 2, 3 * b / 4):
        base = HeatKernelParams.standard(p, 0.8, b)
        lhs = moment(base.at(0.8 * p ** b), k)
        assert abs(lhs - p ** k * moment(base, k)) < 1e-10 * moment(base, k)


def test_moment_bound_is_finite_across_decades():
    prm = HeatKernelParams.standard(2, 1.0, 1.0)
    ratios = [moment(prm.at(t), 0.5) / t ** 0.5 for t in np.logspace(-3, 3, 25)]
    assert max(ratios) / min(ratios) < 2 ** 0.5 + 1e-9


def test_peak_log_periodic_band():
    for p, n, b in ((2, 1, 1.0), (3, 1, 2.0), (2, 2, 0.5)):
        vals = [peak_constant(HeatKernelParams.standard(p, t, b, n)) for t in np.logspace(-3, 3, 49)]
        assert max(vals) / min(vals) <= p ** (n / b) + 1e-9
        one = peak_constant(HeatKernelParams.standard(p, 1.3, b, n))
        assert peak_constant(HeatKernelParams.standard(p, 1.3 * p ** b, b, n)) == pytest.approx(one, rel=1e-12)


def test_semigroup_check():
    a = HeatKernelParams.standard(2, 0.5, 1.0)
    rep = semigroup_check(a, a, N=5, M=5)
    assert rep.fourier == 0.0 or rep.fourier < 1e-15
    assert rep.space < 1e-8


def test_semigroup_small_time_limit():
    f1 = HeatKernelParams.standard(2, 1.0, 1.0)
    devs = []
    for s in (1e-1, 1e-3, 1e-5):
        from padic_fk.finite_model import build_model, free_kernel
        model = build_model(2, 5, 5)
        conv = np.real(np.fft.ifft(np.fft.fft(free_kernel(model, 1.0, s)) * np.fft.fft(free_kernel(model, 1.0, 1.0))))
        devs.append(np.max(np.abs(conv * model.cell_measure - free_kernel(model, 1.0, 1.0))))
        assert semigroup_check(f1, f1.at(s)).space < 1e-8
    assert devs == sorted(devs, reverse=True)


def test_semigroup_requires_same_b():
    with pytest.raises(ValueError):
        semigroup_check(HeatKernelParams.standard(2, 1.0, 1.0), HeatKernelParams.standard(2, 1.0, 2.0))


def test_invalid_params():
    with pytest.raises(ValueError):
        HeatKernelParams.standard(2, 0.0, 1.0)
    with pytest.raises(ValueError):
        HeatKernelParams.standard(2, 1.0, -1.0)
    with pytest.raises(ValueError):
        HeatKernelParams.standard(2, 1.0, 1.0, eps=0.0)


def test_range_error_is_loud():
    with pytest.raises(NumericRangeError):
        radial_law(HeatKernelParams.standard(2, 1.0, 1e-4))


def test_radial_csv():
    law = radial_law(HeatKernelParams.standard(2, 1.0, 1.0), (-2, 2))
    lines = law.to_csv().splitlines()
    assert lines[0] == "r,a_r,pmf,cdf,density" and len(lines) == 6
    assert lines[1].startswith("-2,0.25,")


def test_radial_representation_is_unit_invariant():
    # the API exposes f only through |x|: no per-digit argument exists
    import inspect
    assert list(inspect.signature(density_value).parameters) == ["params", "m"]
    assert math.isfinite(density_value(HeatKernelParams.standard(3, 1.0, 1.0), 0))
