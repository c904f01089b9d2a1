import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmocc.kernel import (DimensionParams, DomainError, ScalingMap, canonicalize, decanonicalize, green_value,
                           rescale_gamma, sphere_avg_green)


@pytest.mark.parametrize("d", range(3, 9))
def test_constants_product(d):
    P = DimensionParams(d)
    assert P.c_d * P.omega_d == pytest.approx(2 / (d - 2), rel=1e-14)


def test_known_values():
    # Green function of the generator (1/2) Laplacian
    assert DimensionParams(3).c_d == pytest.approx(1 / (2 * math.pi))
    assert DimensionParams(4).c_d == pytest.approx(1 / (2 * math.pi**2))
    assert DimensionParams(4).unit_ball_volume == pytest.approx(math.pi**2 / 2)


@pytest.mark.parametrize("bad", [2, 9, 4.5, 0])
def test_dimension_rejected(bad):
    with pytest.raises(DomainError):
        DimensionParams(bad)


def test_gamma_fixed():
    with pytest.raises(DomainError):
        DimensionParams(4, gamma=1.0)


def test_green_singular():
    with pytest.raises(DomainError):
        green_value(DimensionParams(4), 0.0)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_green_harmonic(d):
    # discrete Laplacian of c_d |x|^(2-d) away from the pole
    P = DimensionParams(d)
    x = np.zeros(d)
    x[0] = 1.3
    x[1] = 0.4
    h = 1e-3
    lap = -2 * d * green_value(P, np.linalg.norm(x))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        lap += green_value(P, np.linalg.norm(x + e)) + green_value(P, np.linalg.norm(x - e))
    assert abs(lap / h**2) < 1e-5


@pytest.mark.parametrize("d,s,r", [(4, 1.0, 0.5), (4, 1.0, 2.0), (5, 0.7, 1.5), (3, 2.0, 0.3)])
def test_sphere_average_monte_carlo(d, s, r):
    rng = np.random.default_rng(11)
    z = rng.standard_normal((400_000, d))
    z *= r / np.linalg.norm(z, axis=1, keepdims=True)
    x = np.zeros(d)
    x[0] = s
    P = DimensionParams(d)
    vals = green_value(P, np.linalg.norm(z - x, axis=1))
    se = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - sphere_avg_green(P, s, r)) < 5 * se


def test_sphere_average_symmetric_and_vectorised():
    P = DimensionParams(6)
    s = np.array([0.1, 1.0, 3.0])
    assert np.allclose(sphere_avg_green(P, s, 2.0), sphere_avg_green(P, 2.0, s))
    with pytest.raises(DomainError):
        sphere_avg_green(P, 0.0, 0.0)


def test_canonical_round_trip():
    prob = canonicalize(40.0)
    assert prob.epsilon == pytest.approx(1 / 40)
    assert prob.occupation_factor == pytest.approx(40.0**4)
    assert decanonicalize(prob) == pytest.approx(40.0)
    with pytest.raises(DomainError):
        canonicalize(0.5)


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.01, 100), g_in=st.floats(0.1, 10), g_out=st.floats(0.1, 10))
def test_scaling_map_inverse(lam, g_in, g_out):
    m = ScalingMap(lam, g_in, g_out)
    x, e, z = m.inverse().apply(*m.apply(3.0, 0.1, 2.5))
    assert (x, e, z) == pytest.approx((3.0, 0.1, 2.5), rel=1e-12)
    assert m.measure_weight * m.inverse().measure_weight == pytest.approx(1.0)


def test_rescale_gamma_linear():
    assert rescale_gamma(2.0, 3.0) == 3.0
    assert rescale_gamma(4.0, 3.0) == pytest.approx(6.0)
    assert np.allclose(rescale_gamma(1.0, [2.0, 4.0]), [1.0, 2.0])
    with pytest.raises(DomainError):
        rescale_gamma(0.0, 1.0)
