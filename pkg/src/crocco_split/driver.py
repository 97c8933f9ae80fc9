"""Splitting driver: porous sub-steps on even intervals, transport on odd ones.

Each sub-equation of the split scheme carries a halved time derivative, so the
driver advances it at rate 2 over the true interval length.  The single-process
modes (and ``plain-split``) run at rate 1.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._parallel import map_chunks
from .coefficients import (
    CoefficientModel,
    burgers_residual,
    check_data_bounds,
    check_favorable_pressure,
    check_H2,
    coeff_A,
    coeff_A_zeta,
    coeff_b,
)
from .errors import ConfigError, CroccoSplitError, DataError
from .geometry import Domain2D, GridSpec, build_grid
from .porous import (
    PorousParams,
    barrier_constants,
    comparison_bounds,
    gradient_bound,
    phi,
    porous_advance,
    zeta_variation_bound,
)
from .scenarios import Scenario, load_preset
from .transport import INACTIVE, TransportParams, _pairs, transport_advance
from .verification import (
    bv_functionals,
    bv_growth_check,
    horizontal_bv_step_check,
    two_sided_constant,
    weak_residual,
)

log = logging.getLogger(__name__)

MODES = ("split", "plain-split", "porous-only", "transport-only")


@dataclass
class VerificationOptions:
    bounds: bool = True
    bv: bool = True
    weak_residual: bool = True
    beta: Optional[float] = None
    beta_tilde: Optional[float] = None
    history_stride: int = 1
    bound_tol: float = 1e-10
    k_tol: float = 1e-9
    collinear_tol: float = 1e-12


@dataclass
class RunConfig:
    scenario: Scenario
    grid: GridSpec
    domain: Domain2D
    mode: str = "split"
    porous: PorousParams = field(default_factory=PorousParams)
    transport: TransportParams = field(default_factory=TransportParams)
    verification: VerificationOptions = field(default_factory=VerificationOptions)
    cutoff: Optional[str] = None
    d0: Optional[float] = None
    tol_tangent: float = 1e-10
    workers: int = 1
    echo: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}", key="mode")
        if self.cutoff is None:
            self.cutoff = self.scenario.cutoff

    @property
    def rate_factor(self):
        return 2.0 if self.mode == "split" else 1.0

    @classmethod
    def for_preset(cls, name, nx=16, ny=16, nz=32, T=1.0, n_split=8, mode=None, **kw):
        sc = load_preset(name)
        x0, x1, y0, y1 = sc.domain
        return cls(
            scenario=sc,
            grid=GridSpec(nx, ny, nz, T, n_split),
            domain=Domain2D.rectangle(x0, x1, y0, y1),
            mode=mode or sc.mode,
            **kw,
        )

    def tag(self, i):
        if self.mode == "porous-only":
            return "porous"
        if self.mode == "transport-only":
            return "transport"
        return "porous" if i % 2 == 0 else "transport"


@dataclass
class SolutionHistory:
    grid: object
    times: list = field(default_factory=list)
    slices: list = field(default_factory=list)
    tags: list = field(default_factory=list)

    def append(self, t, W, tag):
        self.times.append(float(t))
        self.slices.append(W)
        self.tags.append(tag)

    @property
    def final(self):
        return self.slices[-1]

    def thinned(self, stride):
        idx = list(range(0, len(self.times), max(1, int(stride))))
        if idx[-1] != len(self.times) - 1:
            idx.append(len(self.times) - 1)
        return idx


class _ColumnCoeffs:
    """(A, b, g) for selected active columns at time t, with the cutoff cached."""

    def __init__(self, model, grid, exit):
        ia, ja = np.nonzero(grid.active)
        self.model = model
        self.x = grid.xi[ia][:, None]
        self.y = grid.eta[ja][:, None]
        xe, ye, gate = exit
        self.xe = xe[ia, ja][:, None]
        self.ye = ye[ia, ja][:, None]
        self.f = model.f(self.x[:, 0], self.y[:, 0], gate[ia, ja])[:, None]
        self.z = grid.zeta[None, :]
        self.ia, self.ja = ia, ja

    def __call__(self, t, cols):
        m, tr, d = self.model, self.model.trace, self.model.data
        x, y, z = self.x[cols], self.y[cols], self.z
        U = tr.U(t, x, y)
        A = np.broadcast_to(coeff_A(U, tr.U_t(t, x, y), tr.p_x(t, x, y), z), (x.shape[0], z.shape[1]))
        g = np.broadcast_to(tr.p_x(t, x, y) / U, x.shape)[:, 0]
        f = self.f[cols]
        if not np.any(f != 0):
            b = np.zeros_like(A)
        else:
            xe, ye = self.xe[cols], self.ye[cols]
            Ue = tr.U(t, xe, ye)
            Ue_t, pe = tr.U_t(t, xe, ye), tr.p_x(t, xe, ye)
            b = coeff_b(
                d.W1(t, x, y, z), d.W1_t(t, x, y, z), d.W1_z(t, x, y, z), d.W1_zz(t, x, y, z),
                coeff_A(Ue, Ue_t, pe, z), f, z,
                W1_tz=d.W1_tz(t, x, y, z), A_inflow_z=coeff_A_zeta(Ue, Ue_t, pe, z),
            )
            b = np.broadcast_to(b, A.shape)
        return A, b, g


def validate_scenario(cfg, grid):
    sc = cfg.scenario
    res = {}
    res["burgers_residual"] = burgers_residual(sc.kfield, grid)
    mom, align = check_H2(sc.trace, sc.kfield, grid)
    res["momentum_residual"] = mom
    res["alignment_residual"] = align
    res["max_p_x"] = check_favorable_pressure(sc.trace, grid)
    X, Y, Z = grid.mesh3d()
    a = grid.active
    W0 = np.broadcast_to(sc.data.W0(X, Y, Z), X.shape)[a]
    W1 = np.stack([np.broadcast_to(sc.data.W1(t, X, Y, Z), X.shape)[a] for t in grid.spec.times])
    cert = check_data_bounds(W0, W1, grid.zeta)
    res["C0"] = cert.C0
    res["data_bounds_ok"] = cert.ok
    tol_k = sc.kfield.default_tol
    tol_h = sc.trace.default_tol
    msgs = []
    if res["burgers_residual"] > tol_k:
        msgs.append(f"k violates k_x + k k_y = 0 (residual {res['burgers_residual']:.3e})")
    if mom > tol_h or align > tol_h:
        msgs.append(f"outer flow violates the Euler trace relations (residuals {mom:.3e}, {align:.3e})")
    if res["max_p_x"] > 0:
        msgs.append(f"pressure gradient is not favorable (max p_x = {res['max_p_x']:.3e})")
    if not cert.ok:
        msgs.append(cert.message)
    res["ok"] = not msgs
    res["messages"] = msgs
    return res


def _coeff_samples(model, grid, times, exit):
    """A, A_zeta, b, B and g stacked over the given times (active nodes only)."""
    X, Y, Z = grid.mesh3d()
    a = grid.active
    out = {"A": [], "A_zeta": [], "b": [], "B": [], "g": []}
    for t in times:
        cs = model.on_grid(t, grid, exit)
        out["A"].append(cs.A[a])
        out["b"].append(cs.b[a])
        out["B"].append(cs.B[a])
        out["g"].append(cs.g[a])
        out["A_zeta"].append(np.broadcast_to(model.A_zeta(t, X, Y, Z), X.shape)[a])
    return {k: np.concatenate(v, axis=0) for k, v in out.items()}


def _min_beta(W, t_eff, theta0, zeta):
    """Smallest beta with theta0 e^{-beta t} phi <= W on the slice (zeta < 1)."""
    if t_eff <= 0:
        return 0.0
    ph = phi(zeta[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(theta0 * ph / W[..., :-1])
    return max(0.0, float(np.nanmax(r)) / t_eff)


def run(cfg, progress=None):
    """Execute the configured run.  Returns ``(SolutionHistory, report dict, timings dict)``."""
    t_start = _time.perf_counter()
    timings = {}
    sc = cfg.scenario
    spec = cfg.grid
    grid = build_grid(cfg.domain, spec, k=sc.kfield.k, tol_tangent=cfg.tol_tangent)
    model = CoefficientModel(cfg.domain, sc.kfield, sc.trace, sc.data, cfg.cutoff, cfg.d0, cfg.tol_tangent)
    validation = validate_scenario(cfg, grid)
    report = {
        "scenario": {"name": sc.name, "fields": dict(sc.exprs), "note": sc.note},
        "config": cfg.echo,
        "mode": cfg.mode,
        "rate_factor": cfg.rate_factor,
        "validation": validation,
        "failures": [],
    }
    if not validation["ok"]:
        raise DataError("; ".join(validation["messages"]))

    X, Y, Z = grid.mesh3d()
    act = grid.active
    W = np.where(act[..., None], np.broadcast_to(sc.data.W0(X, Y, Z), X.shape), np.nan)
    W[..., -1] = np.where(act, 0.0, np.nan)
    hist = SolutionHistory(grid)
    hist.append(0.0, W.copy(), "initial")

    exit = model.grid_exit(grid)
    cols = _ColumnCoeffs(model, grid, exit)
    pairs = _pairs(grid)
    porous_stats = {"newton_iters": 0, "bisections": 0, "max_residual": 0.0}
    tstats = {
        "k_deviation": 0.0, "collinearity": 0.0, "coverage": 1.0, "q2_outflow": 0,
        "tangential": 0, "monotone_foot": True, "Q1": 0, "Q2": 0,
    }
    steps = {"porous": 0.0, "transport": 0.0}
    try:
        _march(cfg, grid, model, sc, hist, cols, pairs, porous_stats, tstats, steps, progress)
    except CroccoSplitError as exc:
        # hand the partial history to the caller so it can still be written out
        report["failures"].append(f"{type(exc).__name__}: {exc}")
        exc.history = hist
        exc.report = report
        raise
    timings["porous_s"] = steps["porous"]
    timings["transport_s"] = steps["transport"]

    tic = _time.perf_counter()
    report.update(_verify(cfg, grid, model, hist, exit, porous_stats, tstats))
    timings["verification_s"] = _time.perf_counter() - tic
    timings["total_s"] = _time.perf_counter() - t_start
    return hist, report, timings


def _march(cfg, grid, model, sc, hist, cols, pairs, porous_stats, tstats, steps, progress):
    spec = cfg.grid
    times = spec.times
    r = cfg.rate_factor
    act = grid.active
    W = hist.slices[-1]
    for i in range(spec.n_split):
        t0, t1 = float(times[i]), float(times[i + 1])
        tag = cfg.tag(i)
        tic = _time.perf_counter()
        if tag == "porous":
            Wc = W[cols.ia, cols.ja, :]

            def work(idx, Wc=Wc, t0=t0):
                return porous_advance(
                    Wc[idx], grid.zeta, lambda t, c: cols(t, idx[c]), t0, t1 - t0, cfg.porous, r,
                    cols=np.arange(idx.size),
                )

            parts, results = map_chunks(work, Wc.shape[0], cfg.workers)
            Wn = np.empty_like(Wc)
            for idx, (Wp, st) in zip(parts, results):
                Wn[idx] = Wp
                porous_stats["newton_iters"] = max(porous_stats["newton_iters"], st.newton_iters)
                porous_stats["bisections"] += st.bisections
                porous_stats["max_residual"] = max(porous_stats["max_residual"], st.max_residual)
            W = W.copy()
            W[cols.ia, cols.ja, :] = Wn
            steps["porous"] += _time.perf_counter() - tic
        else:
            I, J, K = pairs

            def work(idx, W=W, t0=t0):
                return transport_advance(
                    W, grid, model, t0, t1 - t0, r, cfg.transport,
                    U_constant=sc.U_value if sc.U_constant else None,
                    pairs=(I[idx], J[idx], K[idx]),
                )

            parts, results = map_chunks(work, I.size, cfg.workers)
            Wn = np.full(W.shape, np.nan)
            classes = np.zeros(W.shape, dtype=np.int8)
            for idx, (Wp, rec) in zip(parts, results):
                sel = (I[idx], J[idx], K[idx])
                Wn[sel] = Wp[sel]
                classes[sel] = rec.classes[sel]
                tstats["k_deviation"] = max(tstats["k_deviation"], rec.k_deviation)
                tstats["collinearity"] = max(tstats["collinearity"], rec.collinearity)
                tstats["q2_outflow"] += rec.q2_outflow
                tstats["tangential"] += rec.tangential
                tstats["monotone_foot"] = tstats["monotone_foot"] and rec.monotone_foot
            a3 = act[..., None] & np.ones(W.shape, dtype=bool)
            cov = float(np.mean(classes[a3] != INACTIVE))
            tstats["coverage"] = min(tstats["coverage"], cov)
            tstats["Q1"] += int(np.sum(classes == 1))
            tstats["Q2"] += int(np.sum(classes == 2))
            W = Wn
            steps["transport"] += _time.perf_counter() - tic
        hist.append(t1, W.copy(), tag)
        if progress:
            progress(i + 1, spec.n_split, tag)
        log.debug("interval %d/%d (%s) done", i + 1, spec.n_split, tag)


def _verify(cfg, grid, model, hist, exit, porous_stats, tstats):
    """Post-run checks; returns report sections."""
    v = cfg.verification
    sc = cfg.scenario
    a = grid.active
    zeta = grid.zeta
    times = np.array(hist.times)
    r = cfg.rate_factor
    out = {"porous": porous_stats, "transport": tstats, "checks": {}, "slices": []}
    checks = out["checks"]
    if any(tag == "transport" for tag in hist.tags):
        checks["characteristics"] = {
            "ok": bool(
                tstats["q2_outflow"] == 0
                and tstats["coverage"] == 1.0
                and tstats["k_deviation"] <= v.k_tol
                and tstats["collinearity"] <= v.collinear_tol
                and tstats["monotone_foot"]
            ),
            "k_deviation": tstats["k_deviation"],
            "collinearity": tstats["collinearity"],
            "coverage": tstats["coverage"],
            "q2_outflow": tstats["q2_outflow"],
        }

    W0a = hist.slices[0][a]
    per = [{"t": float(t), "tag": tag} for t, tag in zip(hist.times, hist.tags)]
    for rec, W in zip(per, hist.slices):
        rec["C_two_sided"] = two_sided_constant(W[a], zeta)
        rec["min_W_interior"] = float(np.nanmin(W[a][:, :-1]))
        rec["W_zeta_sup"] = gradient_bound([W[a]], zeta)
    C2s = [p["C_two_sided"] for p in per]
    checks["two_sided"] = {"ok": bool(np.all(np.isfinite(C2s))), "C_tilde0": float(max(C2s))}
    out["gradient_sup"] = float(max(p["W_zeta_sup"] for p in per))

    if v.bounds:
        samples = _coeff_samples(model, grid, times, exit)
        W1s = np.concatenate(
            [np.broadcast_to(sc.data.W1(t, *grid.mesh3d()), a.shape + zeta.shape)[a] for t in times]
        )
        if cfg.mode == "porous-only":
            consts = barrier_constants(
                W0a, zeta, samples["A"], samples["b"], samples["A_zeta"], samples["g"], beta=v.beta
            )
            name = "comparison_barriers"
        else:
            consts = barrier_constants(
                W0a, zeta, samples["A"], samples["b"], samples["A_zeta"], samples["g"],
                W1=W1s, B=samples["B"],
            )
            bt = v.beta_tilde
            if bt is None:
                bt = max(consts.beta_default, float(np.nanmax(np.abs(samples["B"] - samples["b"]))) + 1.0)
            consts.beta = float(bt)
            name = "growth_envelope"
        worst_lo = worst_up = np.inf
        min_beta = 0.0
        for rec, W, t in zip(per, hist.slices, times):
            te = (r if cfg.mode != "porous-only" else 1.0) * t
            bc = comparison_bounds(W[a], t, zeta, consts, t_eff=te, tol=v.bound_tol)
            rec["lower_margin"] = bc.lower_margin
            rec["upper_margin"] = bc.upper_margin
            worst_lo = min(worst_lo, bc.lower_margin)
            worst_up = min(worst_up, bc.upper_margin)
            min_beta = max(min_beta, _min_beta(W[a], te, consts.theta0, zeta))
        checks[name] = {
            "ok": bool(worst_lo >= -v.bound_tol and worst_up >= -v.bound_tol),
            "constants": consts.as_dict(),
            "lower_margin": float(worst_lo),
            "upper_margin": float(worst_up),
            "minimal_beta": min_beta,
            "exponent_time_scale": r if cfg.mode != "porous-only" else 1.0,
        }

    if cfg.mode == "porous-only":
        tol = 10 * grid.hz
        gap = -np.inf
        for W in hist.slices:
            vc = zeta_variation_bound(W[a], W0a, tol=tol)
            gap = max(gap, vc.worst_gap)
        checks["zeta_variation"] = {"ok": bool(gap <= tol), "worst_gap": float(gap), "tol": tol}

    if v.bv:
        fun = [bv_functionals(W, grid, t) for W, t in zip(hist.slices, times)]
        for rec, f in zip(per, fun):
            rec.update({"tv_zeta": f.tv_zeta, "v_h": f.v_h, "tv": f.tv, "bv_excluded": f.excluded})
        g = bv_growth_check([f.tv for f in fun], times)
        steps = {}
        for i in range(1, len(fun)):
            tag = hist.tags[i]
            c = horizontal_bv_step_check(fun[i - 1].v_h, fun[i].v_h, times[i] - times[i - 1])
            steps[tag] = max(steps.get(tag, 0.0), c)
        checks["bv_envelope"] = {"ok": bool(g.ok), "M": g.M}
        out["horizontal_step_constants"] = steps

    # the weak form is that of the full equation, so only split runs are paired with it
    if v.weak_residual and cfg.mode in ("split", "plain-split"):
        try:
            wr = weak_residual(times, hist.slices, grid, model)
            out["weak_residual"] = wr.as_dict()
        except CroccoSplitError as exc:
            out["weak_residual"] = {"error": str(exc)}

    out["slices"] = per
    out["failures"] = sorted(name for name, c in checks.items() if not c["ok"])
    out["passed"] = not out["failures"]
    return out


def refine_study(make_config, levels, exact=None):
    """Run ``make_config(level)`` for each level.

    Returns a table with, per level, the error of the final slice against the
    exact solution (if ``exact(t, X, Y, Z)`` is given) or against the next
    finer level (self-convergence, compared on the coarse nodes), plus observed
    orders from log2 ratios and the weak-residual family max.
    """
    if len(levels) < 3:
        raise ConfigError("a refinement study needs at least three levels")
    runs = []
    for lv in levels:
        cfg = make_config(lv)
        hist, rep, _ = run(cfg)
        runs.append((cfg, hist, rep))
    errs = []
    for i, (cfg, hist, rep) in enumerate(runs):
        g = hist.grid
        if exact is not None:
            X, Y, Z = g.mesh3d()
            ex = np.broadcast_to(exact(hist.times[-1], X, Y, Z), X.shape)
            e = float(np.nanmax(np.abs(hist.final - ex)[g.active]))
        elif i + 1 < len(runs):
            e = _restrict_diff(hist, runs[i + 1][1])
        else:
            e = float("nan")
        errs.append(e)
    orders = []
    for i in range(len(errs) - 1):
        a, b = errs[i], errs[i + 1]
        orders.append(float(np.log2(a / b)) if a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b) else float("nan"))
    wr = [rep.get("weak_residual", {}).get("family_max", float("nan")) for _, _, rep in runs]
    return {"levels": list(levels), "errors": errs, "orders": orders, "weak_residual": wr, "reports": [r for _, _, r in runs]}


def _restrict_diff(coarse, fine):
    """Max difference of final slices on the coarse nodes (fine grid must nest)."""
    gc, gf = coarse.grid, fine.grid

    def idx(c, f):
        pos = np.searchsorted(f, c)
        pos = np.clip(pos, 0, f.size - 1)
        if not np.allclose(f[pos], c, atol=1e-12):
            raise ConfigError("refinement levels do not nest")
        return pos

    ix, iy, iz = idx(gc.xi, gf.xi), idx(gc.eta, gf.eta), idx(gc.zeta, gf.zeta)
    Wf = fine.final[np.ix_(ix, iy, iz)]
    d = np.abs(coarse.final - Wf)[gc.active]
    return float(np.nanmax(d))


def verify_history(cfg, times, slices, stored=None):
    """Re-run the post-run checks on a saved history (no solver calls)."""
    sc = cfg.scenario
    grid = build_grid(cfg.domain, cfg.grid, k=sc.kfield.k, tol_tangent=cfg.tol_tangent)
    model = CoefficientModel(cfg.domain, sc.kfield, sc.trace, sc.data, cfg.cutoff, cfg.d0, cfg.tol_tangent)
    if len(times) != cfg.grid.n_split + 1:
        raise DataError(
            f"history has {len(times)} slices but the config implies {cfg.grid.n_split + 1}; "
            "re-verification needs every slice (history_stride 1)"
        )
    hist = SolutionHistory(grid)
    for i, (t, W) in enumerate(zip(times, slices)):
        hist.append(t, W, "initial" if i == 0 else cfg.tag(i - 1))
    stored = stored or {}
    porous_stats = stored.get("porous", {"newton_iters": 0, "bisections": 0, "max_residual": 0.0})
    tstats = stored.get("transport", {
        "k_deviation": 0.0, "collinearity": 0.0, "coverage": 1.0, "q2_outflow": 0,
        "tangential": 0, "monotone_foot": True, "Q1": 0, "Q2": 0,
    })
    report = {
        "scenario": {"name": sc.name, "fields": dict(sc.exprs), "note": sc.note},
        "config": cfg.echo,
        "mode": cfg.mode,
        "rate_factor": cfg.rate_factor,
        "validation": validate_scenario(cfg, grid),
        "failures": [],
    }
    report.update(_verify(cfg, grid, model, hist, model.grid_exit(grid), porous_stats, tstats))
    return hist, report
