import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmocc import stats
from sbmocc.kernel import ConfigurationError


def expo(n, seed=0, mean=1.0):
    return np.random.default_rng(seed).exponential(mean, n)


def test_ks_statistic_known_value():
    # single point at the mean: ECDF jumps 0 -> 1 where F = 1 - 1/e
    assert stats.ks_statistic([2.0]) == pytest.approx(1 - math.exp(-1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3))
def test_ks_scale_invariant(seed, c):
    x = expo(50, seed)
    assert stats.ks_statistic(c * x) == pytest.approx(stats.ks_statistic(x), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 200))
def test_ks_bounds(seed, n):
    x = np.random.default_rng(seed).gamma(0.5, size=n)
    d = stats.ks_statistic(x)
    assert 0 <= d <= 1


def test_equal_weights_take_unweighted_path():
    x = expo(300, 3)
    a = stats.exp_fit(x, seed=1)
    b = stats.exp_fit(x, np.full(300, 0.37), seed=1)
    assert a == b


def test_integer_weights_match_repetition():
    x = expo(50, 4)
    w = np.random.default_rng(5).integers(1, 4, 50)
    assert stats.ks_statistic(x, w) == pytest.approx(stats.ks_statistic(np.repeat(x, w)), abs=1e-12)


def test_exponential_accepted_and_reproducible():
    x = expo(2000, 7, mean=3.0)
    r1 = stats.exp_fit(x, seed=11)
    r2 = stats.exp_fit(x, seed=11)
    assert r1 == r2
    assert r1.p_value > 0.01
    assert r1.fitted_mean == pytest.approx(x.mean())
    assert 0 <= r1.ks_statistic <= 1 and 0 <= r1.p_value <= 1
    assert json.loads(json.dumps(r1.to_dict()))["n_boot"] == 2000


def test_constant_sample_rejected():
    assert stats.exp_fit(np.full(500, 2.0)).p_value < 0.001


def test_degenerate_and_small_samples():
    with pytest.raises(stats.DegenerateFitError):
        stats.exp_fit(np.zeros(200))
    with pytest.raises(ConfigurationError):
        stats.exp_fit(expo(50))
    with pytest.raises(ConfigurationError):
        stats.exp_fit(expo(500), n_boot=100)
    with pytest.raises(ConfigurationError):
        stats.exp_fit(-expo(500))


def test_p_value_calibrated():
    """Fraction of p < 0.05 over 1000 synthetic exponential samples of size 10^4."""
    rng = np.random.default_rng(2024)
    null = stats._null_ks_unweighted(10_000, 2000, 0)
    below = 0
    for _ in range(1000):
        d = stats.ks_statistic(rng.exponential(size=10_000))
        p = (1 + np.count_nonzero(null >= d)) / (1 + null.size)
        below += p < 0.05
    assert abs(below / 1000 - 0.05) <= 0.01 + 2 * math.sqrt(0.05 * 0.95 / 1000)


def test_weighted_p_value_calibrated():
    rng = np.random.default_rng(8)
    w = rng.choice([1.0, 0.5, 0.25], size=400)
    ps = [stats.exp_fit(rng.exponential(size=400), w, seed=i, p_max=2).p_value for i in range(100)]
    assert 0.01 <= np.mean(np.array(ps) < 0.1) <= 0.22


def test_moment_ratios_exponential():
    x = expo(20_000, 9, 2.0)
    for r in stats.moment_ratios(x, 3, seed=1):
        assert r.covers(1.0)
        assert r.ratio == pytest.approx(1.0, abs=0.1)


def test_moment_ratio_coverage():
    hits = 0
    for i in range(200):
        r = stats.moment_ratios(expo(1000, 100 + i), 2, seed=i)[1]
        hits += r.covers(1.0)
    assert 0.9 <= hits / 200 <= 0.99


def test_half_normal_ratio_excludes_one():
    x = np.abs(np.random.default_rng(3).standard_normal(10_000))
    r = stats.moment_ratios(x, 2, seed=2)[1]
    assert r.ratio == pytest.approx(math.pi / 4, rel=0.03)
    assert not r.covers(1.0)


def test_moment_ratio_refusals():
    with pytest.raises(ConfigurationError):
        stats.moment_ratios(expo(150), 3)
    with pytest.raises(ConfigurationError):
        stats.moment_ratios(expo(10_000), 5)


def test_cdf_table(tmp_path):
    x = np.array([1.0, 1.0, 2.0, 3.0])
    t = stats.cdf_table(x)
    assert t[:, 0].tolist() == [1.0, 2.0, 3.0]
    assert t[:, 1].tolist() == [0.5, 0.75, 1.0]
    assert np.allclose(t[:, 2], 1 - np.exp(-t[:, 0] / 1.75))
    stats.write_cdf_csv(tmp_path / "c.csv", x)
    assert (tmp_path / "c.csv").read_text().startswith("value,empirical_cdf,fitted_cdf")


def test_trend_verdicts():
    assert stats.trend_test([1, 2, 3], [5, 5, 5]).verdict == "neither"
    assert stats.trend_test([1, 2, 3, 4], [1, 2, 3, 4]).verdict == "increasing"
    assert stats.trend_test([4, 3, 2, 1], [1, 2, 3, 4]).verdict == "decreasing"
    # order of the input does not matter
    assert stats.trend_test([16, 4, 8], [0.99, 0.9, 0.95]).verdict == "increasing"
    # a monotone sequence inside its noise is not a trend
    assert stats.trend_test([4, 8, 16], [1.0, 1.01, 1.02], [0.05, 0.05, 0.05]).verdict == "neither"
    assert stats.trend_test([4, 8, 16], [1.0, 1.2, 1.4], [0.05, 0.05, 0.05]).verdict == "increasing"
    with pytest.raises(ConfigurationError):
        stats.trend_test([1, 2], [1, 2])


def test_trend_on_iscoe_ratios():
    from sbmocc.hitting import iscoe_ratio, solve_radial
    from sbmocc.kernel import DimensionParams

    eps = [1e-2, 1e-4, 1e-6]
    vals = [iscoe_ratio(solve_radial(DimensionParams(4), e, 1e3), 1.0) for e in eps]
    # approaching 1 from above as eps shrinks, so increasing in eps
    assert stats.trend_test(eps, vals).verdict == "increasing"


def test_kendall_null_exact():
    null = stats._kendall_null(4)
    assert null.size == 24 and null.sum() == 0
    assert np.mean(null >= 6) == pytest.approx(1 / 24)
