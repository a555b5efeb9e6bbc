from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from padic_fk.heatkernel import HeatKernelParams, moment, radial_law
from padic_fk.padic import PadicNumber
from padic_fk.process import (ZERO_RADIUS, PadicArrayCodec, TimeGrid, product_moment_check,
                              product_moment_exact, radial_chisquare, sample_increment, sample_increments,
                              sample_path, sample_paths, two_sample_chisquare)
from padic_fk.rng import RngSpec

P21 = HeatKernelParams.standard(2, 1.0, 1.0)


small = st.builds(lambda n, e: Fraction(n) * Fraction(3) ** e, st.integers(-10 ** 9, 10 ** 9),
                  st.integers(-8, 4))


@settings(max_examples=200, deadline=None)
@given(small, small)
def test_codec_matches_scalar_arithmetic(a, b):
    codec = PadicArrayCodec(3, 8, 60)
    x, y = PadicNumber.from_rational(a, 3, 40), PadicNumber.from_rational(b, 3, 40)
    ex, ey = codec.encode(x), codec.encode(y)
    assert codec.decode(codec.add(ex, ey)) == x + y
    assert codec.decode(codec.sub(ex, ey)) == x - y
    r = codec.radius_exponent(codec.sub(ex, ey)[None])
    expected = ZERO_RADIUS if (x - y).is_zero else -(x - y).valuation
    assert r == expected


@pytest.mark.parametrize("p", [2, 3, 5, 7])
def test_codec_limbs_and_carries(p):
    codec = PadicArrayCodec(p, 5, 70)
    assert codec.nlimbs >= 2
    minus_one = codec.encode(PadicNumber.from_rational(-1, p, 80))
    one = codec.encode(PadicNumber.from_rational(1, p, 80))
    assert np.all(codec.add(minus_one, one) == 0)
    assert codec.digit_string(one) == "1" + "0" * 69 and codec.valuation(one[None])[0] == 5


def test_codec_rejects_large_values():
    codec = PadicArrayCodec(2, 3, 10)
    with pytest.raises(ValueError):
        codec.encode(PadicNumber.from_rational(Fraction(1, 16), 2))


def test_sample_increment_single():
    inc = sample_increment(P21, 1.0, RngSpec(4))
    assert len(inc) == 1 and isinstance(inc[0], PadicNumber)


def test_radial_histogram_matches_pmf():
    codec, inc = sample_increments(P21, 1.0, RngSpec(101), 10 ** 6)
    assert radial_chisquare(codec.radius_exponent(inc), radial_law(P21)) > 1e-3


@pytest.mark.parametrize("p,n", [(5, 1), (3, 2)])
def test_shell_digits_uniform(p, n):
    codec = PadicArrayCodec(p, 4, 20)
    rng = np.random.default_rng(3)
    s = np.full(60000, 1)
    draw = codec.sample_shell(rng, s, n)
    assert np.all(codec.radius_exponent(draw) == 1)
    coord = draw[:, 0, :]
    k0 = codec.top - 1
    digits = np.array([codec.digit_string(c) for c in coord[:5000]])
    lead = [int(d[k0 - codec.valuation(c[None])[0]]) if d != "0" and codec.valuation(c[None])[0] == k0 else -1
            for d, c in zip(digits, coord[:5000])]
    lead = np.array([x for x in lead if x >= 0])
    counts = np.bincount(lead, minlength=p)
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 1e-3
    if n > 1:
        at_max = (codec.valuation(draw) == k0).mean(axis=0)
        assert np.allclose(at_max, (1 - 1 / p) / (1 - p ** -n), atol=0.01)


def test_increment_moment():
    codec, inc = sample_increments(P21, 0.7, RngSpec(5), 200000)
    k = 0.25
    vals = 2.0 ** (k * codec.radius_exponent(inc).astype(float))
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - moment(P21.at(0.7), k)) < 3 * se


def test_path_starts_at_x():
    x = Fraction(3, 4)
    batch = sample_paths(x, TimeGrid(1.0, 8), P21, RngSpec(1), 500)
    start = batch.codec.encode(PadicNumber.from_rational(x, 2))
    assert np.all(batch.values[:, 0, 0] == start)
    path = batch.path(3)
    assert path.node(0)[0] == PadicNumber.from_rational(x, 2)
    assert path.at(0.0)[0] == path.node(0)[0]
    assert path.at(0.2)[0] == path.node(1)[0] and path.at(0.125)[0] == path.node(1)[0]


def test_endpoint_law_independent_of_steps():
    one = sample_paths(0, TimeGrid(1.0, 1), P21, RngSpec(1), 100000).radius_exponents()[:, -1]
    many = sample_paths(0, TimeGrid(1.0, 16), P21, RngSpec(2), 100000).radius_exponents()[:, -1]
    direct_codec, inc = sample_increments(P21, 1.0, RngSpec(3), 100000)
    assert two_sample_chisquare(one, many) > 1e-3
    assert two_sample_chisquare(one, direct_codec.radius_exponent(inc)) > 1e-3
    assert radial_chisquare(many, radial_law(P21)) > 1e-3


def test_increment_radii_uncorrelated():
    batch = sample_paths(0, TimeGrid(2.0, 2), P21, RngSpec(8), 50000)
    c = batch.codec
    d1 = c.radius_exponent(c.sub(batch.values[:, 1], batch.values[:, 0])).astype(float)
    d2 = c.radius_exponent(c.sub(batch.values[:, 2], batch.values[:, 1])).astype(float)
    r = np.corrcoef(d1, d2)[0, 1]
    assert abs(r) < 3 / np.sqrt(len(d1))


def test_moment_band_over_decades():
    ratios = []
    for t in (1e-3, 1e-1, 1e1, 1e3):
        codec, inc = sample_increments(P21, t, RngSpec(9), 50000)
        vals = 2.0 ** (0.3 * codec.radius_exponent(inc).astype(float))
        ratios.append(vals.mean() / t ** 0.3)
    assert max(ratios) / min(ratios) < 2 ** 0.3 * 1.05


def test_reproducible_across_threads():
    grid = TimeGrid(1.0, 4)
    runs = [sample_paths("1/2", grid, P21, RngSpec(77), 9000, threads=k).values for k in (1, 2, 8)]
    assert all(np.array_equal(runs[0], r) for r in runs[1:])
    again = sample_paths("1/2", grid, P21, RngSpec(77), 9000).values
    assert np.array_equal(runs[0], again)
    other = sample_paths("1/2", grid, P21, RngSpec(78), 9000).values
    assert not np.array_equal(runs[0], other)


def test_multidimensional_paths():
    prm = HeatKernelParams.standard(3, 1.0, 2.0, 2)
    batch = sample_paths(["1/3", "0"], TimeGrid(1.0, 4), prm, RngSpec(2), 20000)
    end = batch.radius_exponents()[:, -1]
    codec = batch.codec
    x0 = codec.encode_vector(batch.start)
    rel = codec.radius_exponent(codec.sub(batch.values[:, -1], x0[None]))
    assert radial_chisquare(rel, radial_law(prm)) > 1e-3
    assert end.shape == (20000,)


def test_path_csv():
    path_batch = sample_paths(0, TimeGrid(1.0, 2), P21, RngSpec(1), 2)
    lines = path_batch.to_csv().splitlines()
    assert lines[0] == "path_id,t_j,radius_exponent,digit_string"
    assert lines[1] == "0,0,zero,0" and len(lines) == 7


def test_single_path_helper():
    path = sample_path(0, TimeGrid(1.0, 3), P21, RngSpec(1))
    assert path.values.shape[0] == 4


def test_product_moment_factorization():
    res = product_moment_check(P21, 0.55, 0.3, 0.7, 1.2, 100000, RngSpec(12))
    assert res.z < 3
    assert res.bound_ratio == pytest.approx(res.exact_value / 0.9 ** 1.1)


def test_product_moment_bound_ratio_scaling():
    for p, b in ((2, 1.0), (3, 2.0)):
        prm = HeatKernelParams.standard(p, 1.0, b)
        ts = (0.2, 0.5, 1.1)
        _, r1 = product_moment_exact(prm, 0.6 * b, *ts)
        _, r2 = product_moment_exact(prm, 0.6 * b, *(p ** b * t for t in ts))
        assert abs(r2 - r1) < 1e-9 * r1


def test_product_moment_symmetric_factors():
    e1 = moment(P21.at(0.5), 0.7)
    exact, _ = product_moment_exact(P21, 0.7, 0.5, 1.0, 1.5)
    assert exact == pytest.approx(e1 * e1, rel=1e-14)


@pytest.mark.parametrize("k", [0.3, 1.0, 1.5])
def test_product_moment_window(k):
    with pytest.raises(ValueError, match="b/2 < k < b"):
        product_moment_exact(P21, k, 0.1, 0.2, 0.3)


def test_product_moment_json():
    res = product_moment_check(P21, 0.6, 0.1, 0.2, 0.4, 1000, RngSpec(1))
    import json
    rec = json.loads(res.to_json())
    assert set(rec) >= {"estimate", "stderr", "n", "seed"}


def test_time_grid():
    g = TimeGrid(2.0, 4)
    assert g.nodes[0] == 0 and g.nodes[-1] == 2.0 and np.all(np.diff(g.nodes) > 0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
