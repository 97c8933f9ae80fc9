import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crocco_split.crocco import (
    VelocityProfile, crocco_forward, crocco_inverse, round_trip_error, z_of_zeta,
)
from crocco_split.errors import DataError

ZETA = np.linspace(0.0, 1.0, 129)
ZP = np.linspace(0.0, 14.0, 516)


def test_forward_exponential_profile():
    W = crocco_forward(VelocityProfile(ZP, 1 - np.exp(-ZP), 1.0), ZETA)
    # worst at zeta = 0, where the spline derivative is one-sided
    np.testing.assert_allclose(W, 1 - ZETA, atol=1e-5)
    assert W[-1] == 0.0


def test_forward_tanh_profile():
    W = crocco_forward(VelocityProfile(ZP, np.tanh(ZP), 1.0), ZETA)
    np.testing.assert_allclose(W, 1 - ZETA**2, atol=5e-6)


def test_forward_scales_with_U():
    U = 2.5
    W = crocco_forward(VelocityProfile(ZP, U * np.tanh(ZP), U), ZETA)
    np.testing.assert_allclose(W, 1 - ZETA**2, atol=5e-6)


def test_ramp_profile_rejected():
    z = np.linspace(0, 3, 61)
    with pytest.raises(DataError, match="strictly increasing"):
        crocco_forward(VelocityProfile(z, np.minimum(z, 1.0), 1.0), ZETA)


def test_non_monotone_reports_index():
    u = np.tanh(ZP)
    u[40] = u[39]
    with pytest.raises(DataError, match="index 40"):
        VelocityProfile(ZP, u, 1.0).check()


def test_unresolved_tail_rejected():
    z = np.linspace(0, 2, 50)
    with pytest.raises(DataError, match="tail"):
        crocco_forward(VelocityProfile(z, np.tanh(z), 1.0), ZETA)


def test_inverse_linear_profile_closed_form():
    z = np.linspace(0, 10, 200)
    u, v, w = crocco_inverse(1 - ZETA, ZETA, 1.0, z, k=0.5)
    np.testing.assert_allclose(u, 1 - np.exp(-z), atol=1e-12)
    np.testing.assert_allclose(v, 0.5 * u)
    assert u[0] == v[0] == w[0] == 0.0


def test_inverse_quadratic_profile_closed_form():
    z = np.linspace(0, 8, 200)
    u, _, _ = crocco_inverse(1 - ZETA**2, ZETA, 1.0, z)
    np.testing.assert_allclose(u, np.tanh(z), atol=2e-5)


def test_uniform_columns_have_zero_w():
    nx, ny = 4, 3
    W = np.broadcast_to(1 - ZETA**2, (nx, ny, ZETA.size))
    z = np.linspace(0, 6, 40)
    u, v, w = crocco_inverse(W, ZETA, 1.3, z, k=0.7, xi=np.linspace(0, 1, nx), eta=np.linspace(0, 1, ny))
    np.testing.assert_allclose(w, 0.0, atol=1e-14)
    assert np.all(u[..., 0] == 0) and np.all(v[..., 0] == 0)


def test_w_from_divergence():
    # u = x-dependent via U(x) = 1 + x, k = 0: w = -int u_x dz
    xi = np.linspace(0, 1, 21)
    eta = np.linspace(0, 1, 3)
    U = (1 + xi)[:, None] * np.ones((1, 3))
    W = np.broadcast_to(1 - ZETA, (21, 3, ZETA.size))
    z = np.linspace(0, 5, 1001)
    u, _, w = crocco_inverse(W, ZETA, U, z, xi=xi, eta=eta)
    exact = -(z + np.exp(-z) - 1)  # u = (1 + x)(1 - e^{-z})
    np.testing.assert_allclose(w[5, 1], exact, atol=1e-4)


def test_inverse_rejects_nonpositive():
    W = 1 - ZETA
    W[10] = 0.0
    with pytest.raises(DataError, match="interior node 10"):
        z_of_zeta(W, ZETA)


def test_z_grows_logarithmically():
    zc, w1 = z_of_zeta(1 - ZETA**2, ZETA)
    assert np.all(np.diff(zc) > 0)
    assert w1 == pytest.approx(2.0, rel=1e-3)
    z = np.linspace(0, 40, 4001)
    u, _, _ = crocco_inverse(1 - ZETA**2, ZETA, 1.0, z)
    # heights where zeta = 1 - 2^-m grow at least linearly in m
    heights = [z[np.searchsorted(u, 1 - 2.0**-m)] for m in range(2, 12)]
    assert np.all(np.diff(heights) >= 0.3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.3, 3.0))
def test_round_trip_family(a, U):
    # u = U (1 - e^{-a z}) has W = a (1 - zeta) in closed form
    err = round_trip_error(lambda z: 1 - np.exp(-a * z), 129, U=U, z_max=14.0 / a)
    assert err <= 1e-6


def test_round_trip_tanh_second_order():
    errs = [round_trip_error(np.tanh, n) for n in (65, 129, 257)]
    assert errs[1] <= 1e-4
    r = np.array(errs[:-1]) / errs[1:]
    assert np.all(np.abs(r - 4) < 0.5)
