import numpy as np
import pytest

import crocco_split.driver as drv
from crocco_split.driver import RunConfig, refine_study, run, verify_history
from crocco_split.errors import ConfigError, DataError, SolverError
from crocco_split.geometry import GridSpec


def small(name="burgers-fan", n=6, nz=8, n_split=2, **kw):
    return RunConfig.for_preset(name, nx=n, ny=n, nz=nz, T=0.5, n_split=n_split, **kw)


def test_tags_alternate():
    cfg = small(n_split=4)
    assert [cfg.tag(i) for i in range(4)] == ["porous", "transport"] * 2
    assert small("porous-only").tag(3) == "porous"
    assert small("transport-only").tag(0) == "transport"


def test_rate_factor_by_mode():
    assert small().rate_factor == 2.0
    for m in ("plain-split", "porous-only", "transport-only"):
        assert small(mode=m).rate_factor == 1.0


def test_bad_mode():
    with pytest.raises(ConfigError, match="mode"):
        small(mode="strang")


def test_two_interval_bookkeeping():
    hist, rep, tm = run(small())
    assert hist.tags == ["initial", "porous", "transport"]
    assert hist.times == pytest.approx([0.0, 0.25, 0.5])
    g = hist.grid
    X, Y, Z = g.mesh3d()
    a = g.active
    W0 = np.broadcast_to(small().scenario.data.W0(X, Y, Z), X.shape)
    assert np.array_equal(hist.slices[0][a][:, :-1], W0[a][:, :-1])
    for W in hist.slices:
        assert np.all(W[a][:, -1] == 0.0)
        assert np.all(W[a][:, :-1] > 0)
    assert set(tm) == {"porous_s", "transport_s", "verification_s", "total_s"}
    assert rep["rate_factor"] == 2.0 and rep["passed"]


def test_fixed_point_preserved():
    cfg = small("accelerating-shear", n=4, nz=16, n_split=4)
    hist, rep, _ = run(cfg)
    assert np.nanmax(np.abs(hist.final - hist.slices[0])) < 1e-8
    assert rep["passed"], rep["failures"]


def test_invalid_data_rejected():
    # unfavorable pressure gradient
    from crocco_split.scenarios import Scenario
    fields = {"k": "0", "U": "1", "p_x": "0.5", "p_y": "0", "W0": "1 - zeta", "W1": "1 - zeta"}
    cfg = RunConfig(Scenario.from_exprs("bad", fields), GridSpec(4, 4, 8, 0.5, 2), small().domain)
    with pytest.raises(DataError, match="favorable"):
        run(cfg)


def test_partial_history_on_failure(monkeypatch):
    def boom(*a, **k):
        raise SolverError("injected")

    monkeypatch.setattr(drv, "transport_advance", boom)
    with pytest.raises(SolverError) as ei:
        run(small(n_split=4))
    assert ei.value.history.tags == ["initial", "porous"]
    assert ei.value.report["failures"] == ["SolverError: injected"]


def test_refine_needs_three_levels():
    with pytest.raises(ConfigError, match="three"):
        refine_study(lambda lv: small(n_split=lv), [2, 4])


def test_refine_exact_reference():
    res = refine_study(lambda lv: small("accelerating-shear", n=4, nz=8, n_split=lv), [2, 4, 8],
                       exact=small("accelerating-shear").scenario.data.W1)
    assert max(res["errors"]) < 1e-8
    assert len(res["orders"]) == 2


def test_verify_history_round_trip():
    cfg = small(n_split=4)
    hist, rep, _ = run(cfg)
    _, again = verify_history(cfg, hist.times, hist.slices, rep)
    for key in ("failures", "passed", "checks", "slices"):
        assert again[key] == rep[key]


def test_verify_history_needs_every_slice():
    cfg = small(n_split=4)
    hist, _, _ = run(cfg)
    with pytest.raises(DataError, match="history_stride"):
        verify_history(cfg, hist.times[::2], hist.slices[::2])
