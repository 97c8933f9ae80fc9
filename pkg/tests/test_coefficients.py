import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crocco_split.coefficients import (
    BoundaryData, CoefficientModel, Cutoff, EulerTrace, KField, bspline_cutoff, burgers_residual,
    check_H2, check_data_bounds, check_favorable_pressure, coeff_A, coeff_B, coeff_b,
)
from crocco_split.errors import DataError
from crocco_split.scenarios import load_preset

from conftest import const, square_grid

Z = np.linspace(0.0, 1.0, 33)


def kf(fn):
    return KField.from_function(fn)


# -- Burgers residual ----------------------------------------------------------

def test_burgers_constant_and_fan():
    g = square_grid()
    assert burgers_residual(load_preset("uniform-shear").kfield, g) == 0.0
    assert burgers_residual(load_preset("burgers-fan").kfield, g) < 1e-15


def test_burgers_fan_finite_difference_oracle():
    # independent check: finite-difference derivatives of the raw formula
    g = square_grid()
    r = burgers_residual(kf(lambda x, y: y / (1 + x)), g)
    assert r < 1e-8


def test_burgers_violation_detected():
    r = burgers_residual(KField(lambda x, y: x, const(1.0), const(0.0)), square_grid())
    assert r == pytest.approx(1.0)


# -- H2 and favorable pressure -------------------------------------------------

def test_h2_uniform():
    sc = load_preset("uniform-shear")
    assert check_H2(sc.trace, sc.kfield, square_grid()) == (0.0, 0.0)


def test_h2_decelerating_outer_symbolic_and_fd():
    sc = load_preset("decel-outer")
    g = square_grid()
    mom, al = check_H2(sc.trace, sc.kfield, g)
    assert mom < 1e-14 and al == 0.0
    fd = EulerTrace.from_functions(lambda t, x, y: np.sqrt(1 + 2 * x), const(-1.0), const(0.0), fd_step=1e-5)
    mom_fd, _ = check_H2(fd, sc.kfield, g)
    assert mom_fd < 1e-8


def test_h2_pressure_without_flow_fails():
    tr = EulerTrace(const(1.0), const(0.0), const(0.0), const(0.0), const(-1.0), const(0.0))
    mom, _ = check_H2(tr, KField(const(0.0), const(0.0), const(0.0)), square_grid())
    assert mom == pytest.approx(1.0)


def test_favorable_pressure():
    g = square_grid()
    assert check_favorable_pressure(load_preset("decel-outer").trace, g) == -1.0
    tr = EulerTrace(const(1.0), const(0.0), const(0.0), const(0.0), const(0.2), const(0.0))
    assert check_favorable_pressure(tr, g) > 0


# -- A and B -------------------------------------------------------------------

def test_A_examples():
    np.testing.assert_array_equal(coeff_A(1.0, 0.0, 0.0, Z), 0.0)
    A = coeff_A(1.0, 0.0, -1.0, Z)
    np.testing.assert_allclose(A, 1 - Z**2, atol=1e-15)
    assert A[0] == 1.0 and A[-1] == 0.0
    np.testing.assert_allclose(coeff_A(np.e, np.e, 0.0, Z), -Z * (1 - Z), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5), st.floats(-3, 3), st.floats(-3, 0))
def test_A_vanishes_at_top(U, Ut, px):
    assert coeff_A(U, Ut, px, np.array([1.0]))[0] == 0.0


def test_A_rejects_nonpositive_U():
    with pytest.raises(DataError):
        coeff_A(np.array([1.0, 0.0]), 0.0, 0.0, 0.5)


def test_B_examples():
    np.testing.assert_array_equal(coeff_B(1.0, 0.0, 0.0, 0.0, 0.3, 0.0, Z), 0.0)
    np.testing.assert_allclose(coeff_B(np.e, np.e, 0.0, 0.0, 0.0, 0.0, Z), 1.0)


def test_B_fan_against_finite_differences():
    # analytic k_y from sympy against a finite-difference k field
    x, y = 0.3, 0.6
    sc = load_preset("burgers-fan")
    B = coeff_B(1.0, 0.0, 0.0, 0.0, sc.kfield.k(x, y), sc.kfield.k_y(x, y), Z)
    np.testing.assert_allclose(B, -Z / (1 + x), atol=1e-15)
    fd = kf(lambda x, y: y / (1 + x))
    B_fd = coeff_B(1.0, 0.0, 0.0, 0.0, fd.k(x, y), fd.k_y(x, y), Z)
    np.testing.assert_allclose(B_fd, B, atol=1e-8)


# -- b ---------------------------------------------------------------------------

def test_b_steady_linear_profile():
    c = 1.7
    W1, Wz = c * (1 - Z), np.full_like(Z, -c)
    A = 1 - Z**2
    b = coeff_b(W1, 0.0, Wz, 0.0, A, 1.0, Z, W1_tz=0.0, A_inflow_z=-2 * Z)
    np.testing.assert_allclose(b, 1 + Z, atol=1e-14)
    # numerical evaluation of the defining quotient away from the top node
    quot = -(A * Wz)[:-1] / W1[:-1]
    np.testing.assert_allclose(b[:-1], quot, atol=1e-14)


def test_b_zero_cases():
    W1 = 2 * (1 - Z)
    np.testing.assert_array_equal(coeff_b(W1, 0.0, -2.0, 0.0, 0.0, 1.0, Z, 0.0, 0.0), 0.0)
    np.testing.assert_array_equal(coeff_b(W1, 0.3, -2.0, 0.1, 1 - Z**2, 0.0, Z, 0.0, -2 * Z), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.2, 3))
def test_b_linear_in_cutoff(f1, f2, c):
    args = (c * (1 - Z), 0.0, -c, 0.0, 1 - Z**2)
    kw = dict(W1_tz=0.0, A_inflow_z=-2 * Z)
    lhs = coeff_b(*args, f1 + f2, Z, **kw)
    rhs = coeff_b(*args, f1, Z, **kw) + coeff_b(*args, f2, Z, **kw)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.floats(-2, 2), st.floats(-2, 0))
def test_b_bounded_near_top(c, Ut, px):
    zz = 1 - np.logspace(-12, -1, 30)[::-1]
    zz = np.append(zz, 1.0)
    A = coeff_A(1.0, Ut, px, zz)
    b = coeff_b(c * (1 - zz), 0.0, -c, 0.0, A, 1.0, zz, W1_tz=0.0, A_inflow_z=-(1 - 2 * zz) * Ut + 2 * zz * px)
    assert np.all(np.isfinite(b))
    assert np.max(np.abs(b)) <= abs(Ut) + 2 * abs(px) + 1e-9


def test_b_rejects_nonpositive_inflow():
    W1 = 1 - Z
    W1[3] = -0.1
    with pytest.raises(DataError):
        coeff_b(W1, 0.0, -1.0, 0.0, 0.0, 1.0, Z)


# -- data bounds ---------------------------------------------------------------

def test_data_bounds_examples():
    assert check_data_bounds(1 - Z, 1 - Z, Z).C0 == pytest.approx(1.0)
    assert check_data_bounds(2 * (1 - Z), (1 - Z) / 2, Z).C0 == pytest.approx(2.0)
    bad = check_data_bounds((1 - Z) ** 2, 1 - Z, Z)
    assert not bad.ok and "lower bound" in bad.message


def test_data_bounds_reports_location():
    W = 1 - Z
    W[5] = 0.0
    cert = check_data_bounds(1 - Z, W, Z)
    assert not cert.ok and cert.location == (5,)


# -- cutoff ------------------------------------------------------------------------

def test_bspline_cutoff_shape():
    s = np.linspace(0, 1.5, 301)
    chi = bspline_cutoff(s)
    assert chi[0] == 1.0
    assert np.all(chi[s >= 1] == 0.0)
    assert np.all(np.diff(chi) <= 1e-15)
    # C^2 at the knot s = 1/2: one-sided second differences agree
    h = 1e-4
    d2l = (bspline_cutoff(0.5) - 2 * bspline_cutoff(0.5 - h) + bspline_cutoff(0.5 - 2 * h)) / h**2
    d2r = (bspline_cutoff(0.5 + 2 * h) - 2 * bspline_cutoff(0.5 + h) + bspline_cutoff(0.5)) / h**2
    assert d2l == pytest.approx(d2r, rel=1e-2)


def test_cutoff_is_one_on_inflow(unit_square):
    f = Cutoff(unit_square, const(0.5))
    bc = f.classification
    inflow = bc.points[bc.labels == -1]
    np.testing.assert_allclose(f(inflow[:, 0], inflow[:, 1]), 1.0)
    assert np.all(f(np.array([0.9]), np.array([0.9])) >= 0)


def test_model_A_zero_at_top_and_finite_b():
    sc = load_preset("decel-outer")
    g = square_grid(k=sc.kfield.k)
    m = CoefficientModel(g.domain, sc.kfield, sc.trace, sc.data)
    cs = m.on_grid(0.0, g)
    a = g.active
    assert np.all(cs.A[a][:, -1] == 0.0)
    assert np.isfinite(cs.M0)
    np.testing.assert_allclose(cs.b1[a], (cs.B - cs.b)[a])


def test_fd_boundary_data_close_to_symbolic():
    sc = load_preset("transport-only")
    fd = BoundaryData.from_functions(sc.data.W0, sc.data.W1, fd_step=1e-4)
    pts = (0.4, 0.3, 0.2, 0.6)
    assert fd.W1_t(*pts) == pytest.approx(float(sc.data.W1_t(*pts)), abs=1e-7)
    assert fd.W1_zz(*pts) == pytest.approx(float(sc.data.W1_zz(*pts)), abs=1e-5)
