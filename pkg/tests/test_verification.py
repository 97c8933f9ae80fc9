import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

import crocco_split.verification as ver
from crocco_split.coefficients import CoefficientModel
from crocco_split.errors import ConfigError
from crocco_split.geometry import Domain2D, GridSpec, build_grid
from crocco_split.scenarios import Scenario, load_preset, t_, x_, y_, z_

SQ = Domain2D.rectangle(0.0, 1.0, 0.0, 1.0)


def grid(n=16, nz=16):
    return build_grid(SQ, GridSpec(n, n, nz, 1.0, 2))


def field(g, fn):
    X, Y, Z = g.mesh3d()
    return np.array(np.broadcast_to(fn(X, Y, Z), X.shape), dtype=float)


# -- BV functionals ------------------------------------------------------------

def test_uniform_linear_slice():
    g = grid()
    bv = ver.bv_functionals(field(g, lambda X, Y, Z: 2.5 * (1 - Z)), g)
    assert bv.v_h == 0.0
    assert bv.tv_zeta == pytest.approx(2.5, rel=1e-12)
    assert bv.excluded == 0


def _vh_oracle():
    # (1-zeta) 0.1 pi |cos pi x| / (1 + 0.1 sin pi x)^2, zeta integral gives 1/2
    f = lambda x: 0.1 * np.pi * abs(np.cos(np.pi * x)) / (1 + 0.1 * np.sin(np.pi * x)) ** 2  # noqa: E731
    return 0.5 * (quad(f, 0, 0.5, epsabs=1e-13)[0] + quad(f, 0.5, 1, epsabs=1e-13)[0])


def test_weighted_horizontal_variation_against_quadrature():
    exact = _vh_oracle()
    errs = []
    for n in (32, 64, 128):
        g = grid(n, 8)
        W = field(g, lambda X, Y, Z: (1 - Z) * (1 + 0.1 * np.sin(np.pi * X)))
        errs.append(abs(ver.bv_functionals(W, g).v_h - exact))
    assert errs[-1] < 1e-3 * exact
    assert errs[0] > errs[1] > errs[2]


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3), st.floats(-0.9, 0.9), st.floats(0, 3))
def test_functionals_nonnegative(c, a, w):
    g = grid(8, 8)
    W = field(g, lambda X, Y, Z: c * (1 - Z) * (1 + a * np.sin(w * X + Y)))
    bv = ver.bv_functionals(W, g)
    assert bv.tv_zeta >= 0 and bv.v_h >= 0 and bv.tv >= 0


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_transpose_invariance(a, b):
    g = grid(12, 8)
    f = lambda X, Y, Z: (1 - Z) * (1 + a * np.sin(2 * X) + b * X * Y**2)  # noqa: E731
    W = field(g, f)
    Wt = np.transpose(field(g, lambda X, Y, Z: f(Y, X, Z)), (1, 0, 2))
    A, B = ver.bv_functionals(W, g), ver.bv_functionals(Wt, g)
    assert A.v_h == pytest.approx(B.v_h, rel=1e-12)
    assert A.tv == pytest.approx(B.tv, rel=1e-12)


def test_resampled_slice_agrees_to_second_order():
    f = lambda X, Y, Z: (1 - Z) * (1 + 0.2 * np.sin(X + 2 * Y)) * (1 + 0.5 * Z)  # noqa: E731
    d = []
    for n in (8, 16, 32):
        a, b = grid(n, n), grid(2 * n, 2 * n)
        d.append(abs(ver.bv_functionals(field(a, f), a).v_h - ver.bv_functionals(field(b, f), b).v_h))
    rates = np.log2(np.array(d[:-1]) / d[1:])
    assert np.all(rates > 1.7)


def test_floor_excludes_nodes():
    g = grid(4, 4)
    W = field(g, lambda X, Y, Z: 1 - Z)
    W[1, 1, 1] = 0.0
    assert ver.bv_functionals(W, g).excluded == 1


# -- growth envelope and step constants ------------------------------------------

def test_growth_constant_tv():
    t = np.linspace(0, 1, 9)
    g = ver.bv_growth_check(np.full(9, 3.0), t)
    assert g.ok and g.M < 1.0


def test_growth_negative_control():
    # TV doubling every interval: the minimal M grows with the number of intervals
    Ms = []
    for n in (8, 16, 32):
        t = np.linspace(0, 1, n + 1)
        Ms.append(ver.bv_growth_check(2.0 ** np.arange(n + 1), t).M)
    assert Ms[1] / Ms[0] > 1.5 and Ms[2] / Ms[1] > 1.5


def test_growth_minimal_is_tight():
    t = np.linspace(0, 1, 5)
    tv = np.array([1.0, 1.5, 2.0, 3.0, 5.0])
    M = ver.bv_growth_check(tv, t).M
    assert np.all(tv <= M * (1 + np.exp(M * t) * tv[0]) * (1 + 1e-9))
    assert np.any(tv > 0.999 * M * (1 + np.exp(0.999 * M * t) * tv[0]))


def test_step_constant():
    assert ver.horizontal_bv_step_check(2.0, 1.5, 0.1) == 0.0
    assert ver.horizontal_bv_step_check(0.0, 0.0, 0.1) == 0.0
    C, v, dt = 3.0, 0.7, 0.125
    vb = (v + C * dt) * np.exp(C * dt)
    assert ver.horizontal_bv_step_check(v, vb, dt) == pytest.approx(C, rel=1e-10)


def test_two_sided_constant():
    z = np.linspace(0, 1, 17)
    assert ver.two_sided_constant(1 - z, z) == pytest.approx(1.0)
    assert ver.two_sided_constant(np.stack([2 * (1 - z), 0.25 * (1 - z)]), z) == pytest.approx(4.0)


# -- test functions -------------------------------------------------------------

def _fan():
    sc = load_preset("burgers-fan")
    return sc, CoefficientModel(SQ, sc.kfield, sc.trace, sc.data)


def test_family_is_admissible():
    sc, _ = _fan()
    fam = ver.test_family(SQ, sc.kfield.k, 1.0)
    assert len(fam) == 12
    for psi in fam:
        ver.check_admissible(psi, SQ, sc.kfield.k, 1.0)


class _One:
    def __call__(self, t):
        return np.ones_like(np.asarray(t, dtype=float)), np.zeros_like(np.asarray(t, dtype=float))


class _Flat:
    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.ones(np.broadcast(x, y).shape), np.zeros(np.broadcast(x, y).shape), np.zeros(np.broadcast(x, y).shape)


class _Sin:
    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.sin(np.pi * (1 - z)), -np.pi * np.cos(np.pi * (1 - z)), -np.pi**2 * np.sin(np.pi * (1 - z))


@pytest.mark.parametrize("parts, what", [
    ((_One(), "H", "V"), "t = T"),
    (("T", _Flat(), "V"), "outflow"),
    (("T", "H", _Sin()), "psi_zeta"),
])
def test_inadmissible_rejected(parts, what):
    sc, _ = _fan()
    base = ver.test_family(SQ, sc.kfield.k, 1.0)[0].terms[0]
    pick = {"T": base[1], "H": base[2], "V": base[3]}
    T, H, V = (pick[p] if isinstance(p, str) else p for p in parts)
    psi = ver.TestFunction([(1.0, T, H, V)], "bad")
    with pytest.raises(ConfigError, match=what):
        ver.check_admissible(psi, SQ, sc.kfield.k, 1.0)


def _history(n, nz, nt, fn):
    g = build_grid(SQ, GridSpec(n, n, nz, 1.0, 2))
    X, Y, Z = g.mesh3d()
    times = np.linspace(0, 1, nt)
    return g, times, [np.array(np.broadcast_to(fn(t, X, Y, Z), X.shape)) for t in times]


def test_zero_test_function():
    sc, m = _fan()
    g, times, sl = _history(8, 8, 5, lambda t, X, Y, Z: 1 - Z)
    rep = ver.weak_residual(times, sl, g, m, family=[ver.TestFunction([], "zero")])
    assert rep.residuals == [0.0]


def test_pairing_is_linear():
    sc, m = _fan()
    g, times, sl = _history(8, 8, 5, lambda t, X, Y, Z: (1 - Z) * (1 + 0.2 * X * Z))
    fam = ver.test_family(SQ, sc.kfield.k, 1.0)
    a, b = 0.7, -1.9
    combo = a * fam[0] + b * fam[5]
    rep = ver.weak_residual(times, sl, g, m, family=[fam[0], fam[5], combo])
    signed = np.array(rep.lhs) - np.array(rep.rhs)
    assert signed[2] == pytest.approx(a * signed[0] + b * signed[1], abs=1e-12)


def test_fixed_point_residual_vanishes_under_refinement():
    sc = load_preset("accelerating-shear")
    m = CoefficientModel(SQ, sc.kfield, sc.trace, sc.data, "one")
    res = []
    for n, nz, nt in [(8, 16, 9), (16, 32, 17), (32, 64, 33)]:
        g, times, sl = _history(n, nz, nt, lambda t, X, Y, Z: 1 - Z)
        res.append(ver.weak_residual(times, sl, g, m).family_max)
    assert res[0] > res[1] > res[2]
    assert np.log2(res[1] / res[2]) > 1.5


def test_manufactured_source_matches_pairing():
    # W = (1-zeta)(1 + 0.3x + 0.2 y zeta + 0.1 t) solves L(W) = S with the
    # flux condition built into p_x; the pairing must equal int S psi / W^2
    Wtxt = "(1-zeta)*(1+0.3*x+0.2*y*zeta+0.1*t)"
    Utxt = "sqrt(1+2*x)*exp(0.1*t)"
    pxtxt = f"{Utxt}*(1+0.3*x+0.1*t)*(0.2*y-1-0.3*x-0.1*t)"
    fields = {"k": "y/(1+x)", "U": Utxt, "p_x": pxtxt, "p_y": "0", "W0": Wtxt.replace("t", "0"), "W1": Wtxt}
    sc = Scenario.from_exprs("mms", fields, cutoff="one")
    m = CoefficientModel(SQ, sc.kfield, sc.trace, sc.data, "one")
    loc = {"zeta": z_, "x": x_, "y": y_, "t": t_}
    W = sp.parse_expr(Wtxt, local_dict=loc)
    U = sp.parse_expr(Utxt, local_dict=loc)
    px = sp.parse_expr(pxtxt, local_dict=loc)
    k = y_ / (1 + x_)
    assert sp.simplify((W * sp.diff(W, z_)).subs(z_, 0) - px / U) == 0
    A = -z_ * (1 - z_) * sp.diff(U, t_) / U - (1 - z_**2) * px / U
    B = sp.diff(U, t_) / U + z_ * (sp.diff(U, x_) + k * sp.diff(U, y_)) - sp.diff(k, y_) * z_ * U
    L = (sp.diff(W, t_) + z_ * U * (sp.diff(W, x_) + k * sp.diff(W, y_)) + A * sp.diff(W, z_) + B * W
         - W**2 * sp.diff(W, z_, 2))
    Sf = sp.lambdify((t_, x_, y_, z_), sp.simplify(L / W**2), "numpy")
    Wf = sp.lambdify((t_, x_, y_, z_), W, "numpy")
    fam = ver.test_family(SQ, sc.kfield.k, 1.0)
    gaps = []
    for n, nz, nt in [(8, 16, 9), (16, 32, 17), (32, 64, 33)]:
        g, times, sl = _history(n, nz, nt, Wf)
        rep = ver.weak_residual(times, sl, g, m, family=fam)
        X, Y, Z = g.mesh3d()
        wq = g.horizontal_weights()[..., None] * g.zeta_weights()[None, None, :]
        src = []
        for psi in fam:
            vals = []
            for t in times:
                with np.errstate(invalid="ignore", divide="ignore"):
                    S = Sf(t, X, Y, Z) * psi.evaluate(t, X, Y, Z)[0]
                S[..., -1] = 2 * S[..., -2] - S[..., -3]
                vals.append(np.sum(S * wq))
            src.append(np.trapezoid(vals, times))
        gaps.append(np.abs(np.array(rep.lhs) - np.array(rep.rhs) - np.array(src)).max())
    rates = np.log2(np.array(gaps[:-1]) / gaps[1:])
    assert np.all(rates > 1.7), gaps
