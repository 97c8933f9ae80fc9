"""Acceptance criteria, one test each.  Every test prints a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from crocco_split.crocco import round_trip_error
from crocco_split.driver import RunConfig, run
from crocco_split.mms import porous_decay_study, transport_shift_study
from crocco_split.output import write_slices
from crocco_split.porous import PorousParams, porous_advance
from crocco_split.scenarios import PRESETS

pytestmark = pytest.mark.slow


@pytest.fixture
def report_line(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def test_c01_fixed_point(report_line):
    cfg = RunConfig.for_preset("uniform-shear", 16, 16, 32, 1.0, 8)
    tic = time.perf_counter()
    hist, _, _ = run(cfg)
    secs = time.perf_counter() - tic
    a = hist.grid.active
    ref = 1.0 - hist.grid.zeta
    dev = max(float(np.nanmax(np.abs(W[a] - ref))) for W in hist.slices)
    ok = dev <= 1e-8 and secs < 10.0
    assert report_line(1, ok, f"uniform-shear max|W-(1-zeta)| = {dev:.3e} (tol 1e-8), {secs:.2f} s"), dev


def test_c02_two_sided_bound(report_line):
    rows, ok = [], True
    for name in ("burgers-fan", "decel-outer"):
        C = []
        for ns in (8, 16):
            _, rep, _ = run(RunConfig.for_preset(name, 16, 16, 32, 1.0, ns))
            ts = rep["checks"]["two_sided"]
            ok &= ts["ok"]
            C.append(ts["C_tilde0"])
        var = abs(C[1] - C[0]) / C[0]
        ok &= bool(np.all(np.isfinite(C))) and var < 0.2
        rows.append(f"{name} C0~ {C[0]:.4f}/{C[1]:.4f} ({100 * var:.1f}%)")
    assert report_line(2, ok, "; ".join(rows))


def test_c03_comparison_barriers(report_line):
    rows, ok = [], True
    for name in ("porous-only", "decel-outer", "burgers-fan"):
        _, rep, _ = run(RunConfig.for_preset(name, 16, 16, 32, 1.0, 8, mode="porous-only"))
        c = rep["checks"]["comparison_barriers"]
        ok &= c["lower_margin"] >= -1e-10 and c["upper_margin"] >= -1e-10
        rows.append(f"{name} margins {c['lower_margin']:.2e}/{c['upper_margin']:.2e} beta {c['constants']['beta']:.3f}")
    assert report_line(3, ok, "; ".join(rows))


def test_c04_characteristics(report_line):
    _, rep, _ = run(RunConfig.for_preset("burgers-fan", 16, 16, 32, 1.0, 8))
    t = rep["transport"]
    ok = (t["k_deviation"] <= 1e-9 and t["collinearity"] <= 1e-12 and t["coverage"] == 1.0
          and t["q2_outflow"] == 0)
    assert report_line(4, ok, f"k-dev {t['k_deviation']:.2e}, collinearity {t['collinearity']:.2e}, "
                              f"coverage {t['coverage']:.3f}, Q2 on outflow {t['q2_outflow']}")


def test_c05_exact_transport(report_line):
    res = transport_shift_study()
    C = np.asarray(res["error_over_h2"])
    ok = all(abs(o - 2.0) <= 0.3 for o in res["orders"]) and C.max() <= 2 * C.min()
    assert report_line(5, ok, f"errors {', '.join(f'{e:.2e}' for e in res['errors'])}; "
                              f"orders {', '.join(f'{o:.3f}' for o in res['orders'])}")


def test_c06_porous_decay(report_line):
    be = porous_decay_study(theta=1.0)
    cn = porous_decay_study(theta=0.5)
    ok = min(be["orders"]) >= 1.0 and min(cn["orders"]) >= 1.8
    assert report_line(6, ok, f"backward orders {', '.join(f'{o:.3f}' for o in be['orders'])}; "
                              f"trapezoidal {', '.join(f'{o:.3f}' for o in cn['orders'])}")


def _variation_sides(W, W0):
    lhs = np.abs(np.diff(W, axis=-1)).sum(axis=-1)
    rhs = np.abs(np.diff(W0, axis=-1)).sum(axis=-1) + W[..., 0] - W0[..., 0]
    return lhs, rhs


def test_c07_zeta_variation(report_line):
    ok, rows = True, []
    for name in sorted(PRESETS):
        _, rep, _ = run(RunConfig.for_preset(name, 16, 16, 32, 1.0, 8, mode="porous-only"))
        c = rep["checks"]["zeta_variation"]
        ok &= c["ok"]
        rows.append(f"{c['worst_gap']:.1e}")
    hist, _, _ = run(RunConfig.for_preset("uniform-shear", 16, 16, 32, 1.0, 8, mode="porous-only"))
    a = hist.grid.active
    eq1 = max(float(np.max(np.abs(np.subtract(*_variation_sides(W[a], hist.slices[0][a])))))
              for W in hist.slices)
    z = np.linspace(0, 1, 33)
    coeffs = lambda t, cols: (np.zeros((len(cols), z.size)), np.ones((len(cols), z.size)),  # noqa: E731
                              np.full(len(cols), -np.exp(-2 * t)))
    W, _ = porous_advance((1 - z)[None], z, coeffs, 0.0, 3.0, PorousParams(epsilon=1e-12, inner_steps=16), 1.0)
    eq6 = float(np.max(np.abs(np.subtract(*_variation_sides(W, (1 - z)[None])))))
    ok &= eq1 <= 1e-8 and eq6 <= 1e-8
    assert report_line(7, ok, f"worst gaps {', '.join(rows)} (tol 10 dzeta); equality {eq1:.1e}, {eq6:.1e}")


def test_c08_bv_envelope(report_line):
    ok, rows = True, []
    for name in sorted(PRESETS):
        M = []
        for ns in (8, 16):
            _, rep, _ = run(RunConfig.for_preset(name, 16, 16, 32, 1.0, ns, mode="split"))
            M.append(rep["checks"]["bv_envelope"]["M"])
        ok &= bool(np.all(np.isfinite(M))) and M[1] < 2 * M[0]
        rows.append(f"{name} {M[0]:.3f}->{M[1]:.3f}")
    assert report_line(8, ok, "; ".join(rows))


def test_c09_weak_residual(report_line):
    by_split = [run(RunConfig.for_preset("burgers-fan", 16, 16, 32, 1.0, ns))[1]["weak_residual"]["family_max"]
                for ns in (4, 8, 16)]
    by_grid = [run(RunConfig.for_preset("burgers-fan", n, n, 2 * n, 1.0, 8))[1]["weak_residual"]["family_max"]
               for n in (8, 16, 32)]
    ok = all(np.diff(by_split) < 0) and all(np.diff(by_grid) < 0)
    assert report_line(9, ok, f"n_split 4/8/16: {', '.join(f'{v:.3e}' for v in by_split)}; "
                              f"grid 8/16/32: {', '.join(f'{v:.3e}' for v in by_grid)}")


def test_c10_crocco_round_trip(report_line):
    profiles = {"exp": lambda z: 1 - np.exp(-z), "tanh": np.tanh}
    ok, rows = True, []
    for name, u in profiles.items():
        e65, e129 = round_trip_error(u, 65), round_trip_error(u, 129)
        ratio = e65 / e129
        ok &= e129 <= 1e-4 and 3.5 <= ratio <= 4.5
        rows.append(f"{name} err {e129:.2e} ratio {ratio:.2f}")
    assert report_line(10, ok, "; ".join(rows) + " (ratio band 3.5-4.5)")


def test_c11_determinism(report_line, tmp_path):
    ok, bad = True, []
    for name in sorted(PRESETS):
        blobs = []
        for w in (1, 3):
            hist, _, _ = run(RunConfig.for_preset(name, 8, 8, 16, 1.0, 4, mode="split", workers=w))
            p = tmp_path / f"{name}-{w}.csv"
            write_slices(p, hist)
            blobs.append(p.read_bytes())
        if blobs[0] != blobs[1]:
            ok = False
            bad.append(name)
    assert report_line(11, ok, f"{len(PRESETS)} presets, workers 1 vs 3" + (f"; differ: {bad}" if bad else ""))
