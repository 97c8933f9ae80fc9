"""Estimate functionals and the weak-form residual on computed histories.

The weak pairing used here comes from dividing the equation by W^2 (Z = 1/W)
and integrating by parts against psi with psi(T) = 0, psi = 0 on the outflow
boundary, psi(zeta=1) = 0 and psi_zeta(0) = 0:

    int Z [psi_t + zeta (U psi)_x + zeta (k U psi)_y + (A psi)_zeta + B psi] - W psi_zz
        = - int_D Z0 psi(0) + int_0^T int_{inflow} int_0^1 zeta U psi k_n / W1.

The two zeta = 0 boundary contributions cancel because A(0) = -p_x/U, so the
flux condition enters only through the equation itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import INFLOW, OUTFLOW, classify_boundary

# --------------------------------------------------------------------------
# BV functionals


@dataclass
class BVFunctionals:
    t: float
    tv_zeta: float
    v_h: float
    tv: float
    excluded: int = 0

    def as_dict(self):
        return {"t": self.t, "tv_zeta": self.tv_zeta, "v_h": self.v_h, "tv": self.tv, "excluded": self.excluded}


def _grad(W, grid):
    with np.errstate(invalid="ignore"):
        Wx = np.gradient(W, grid.xi, axis=0, edge_order=2)
        Wy = np.gradient(W, grid.eta, axis=1, edge_order=2)
        Wz = np.gradient(W, grid.zeta, axis=2, edge_order=2)
    return Wx, Wy, Wz


def _integrate(F, grid):
    w = grid.horizontal_weights()[..., None] * grid.zeta_weights()[None, None, :]
    F = np.where(w > 0, F, 0.0)
    return float(np.sum(np.nan_to_num(F) * w))


def bv_functionals(W, grid, t=0.0, floor_w=1e-14):
    """TV in zeta, the weighted horizontal variation and the plain total variation."""
    W = np.asarray(W, dtype=float)
    Wx, Wy, Wz = _grad(W, grid)
    zeta = grid.zeta[None, None, :]
    ok = (W >= floor_w) & (zeta < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        vh = np.where(ok, (np.abs(Wx) + np.abs(Wy)) / W**2 * (1 - zeta) ** 2, 0.0)
    excluded = int(np.sum(grid.active[..., None] & (zeta < 1) & ~(W >= floor_w)))
    return BVFunctionals(
        float(t),
        _integrate(np.abs(Wz), grid),
        _integrate(vh, grid),
        _integrate(np.abs(Wz) + np.abs(Wx) + np.abs(Wy), grid),
        excluded,
    )


@dataclass
class BVGrowth:
    M: float
    ok: bool


def _envelope_ok(M, tv, t, tv0):
    return bool(np.all(tv <= M * (1 + np.exp(M * t) * tv0) * (1 + 1e-12) + 1e-300))


def bv_growth_check(tv, times, M_cap=1e6):
    """Smallest M with TV(t) <= M (1 + e^{Mt} TV(0)) at every recorded time."""
    tv = np.asarray(tv, dtype=float)
    t = np.asarray(times, dtype=float)
    tv0 = float(tv[0])
    if np.all(tv == 0):
        return BVGrowth(0.0, True)
    hi = 1.0
    while not _envelope_ok(hi, tv, t, tv0):
        hi *= 2
        if hi > M_cap:
            return BVGrowth(float("inf"), False)
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _envelope_ok(mid, tv, t, tv0):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return BVGrowth(hi, True)


def horizontal_bv_step_check(v_a, v_b, dt):
    """Smallest C >= 0 with V(b) <= (V(a) + C dt) e^{C dt} across one interval."""
    if v_b <= v_a:
        return 0.0
    f = lambda C: (v_a + C * dt) * np.exp(C * dt) - v_b  # noqa: E731 - increasing in C
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e12:
            return float("inf")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


def two_sided_constant(W, zeta):
    """Realized C with C^-1 (1-zeta) <= W <= C (1-zeta) on a slice (zeta last)."""
    from .coefficients import ratio_to_linear

    R = ratio_to_linear(W, zeta)
    lo = float(np.nanmin(R))
    hi = float(np.nanmax(R))
    if not lo > 0:
        return float("inf")
    return max(1.0, hi, 1.0 / lo)


# --------------------------------------------------------------------------
# test functions


class _Time:
    def __init__(self, kind, T):
        self.kind, self.T = kind, T

    def __call__(self, t):
        s = np.asarray(t, dtype=float) / self.T
        if self.kind == 0:
            return 1 - s, -np.ones_like(s) / self.T
        if self.kind == 1:
            return s * (1 - s), (1 - 2 * s) / self.T
        return (1 - s) ** 2, -2 * (1 - s) / self.T

    def describe(self):
        return ["(1-s)", "s(1-s)", "(1-s)^2"][self.kind] + " with s=t/T"


class _Horizontal:
    """Product of distances to the edges touching the outflow boundary, times 1 or (x - xc)."""

    def __init__(self, edges, kind, xc):
        self.a = [e[0] for e in edges]
        self.m = [e[1] for e in edges]  # inward unit normal
        self.kind = kind
        self.xc = xc

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        H = np.ones(np.broadcast(x, y).shape)
        Hx = np.zeros_like(H)
        Hy = np.zeros_like(H)
        for a, m in zip(self.a, self.m):
            d = (x - a[0]) * m[0] + (y - a[1]) * m[1]
            Hx = Hx * d + H * m[0]
            Hy = Hy * d + H * m[1]
            H = H * d
        if self.kind == 1:
            Hx = Hx * (x - self.xc) + H
            Hy = Hy * (x - self.xc)
            H = H * (x - self.xc)
        return H, Hx, Hy

    def describe(self):
        return f"prod(dist to {len(self.a)} outflow edge(s))" + (" * (x - xc)" if self.kind else "")


class _Vertical:
    def __init__(self, m):
        self.c = 0.5 * np.pi * m

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.cos(self.c * z), -self.c * np.sin(self.c * z), -self.c**2 * np.cos(self.c * z)

    def describe(self):
        return f"cos({self.c / np.pi * 2:g} pi zeta / 2)"


@dataclass
class TestFunction:
    """Linear combination of separable products T(t) H(x, y) V(zeta)."""

    terms: list = field(default_factory=list)  # (coef, _Time, _Horizontal, _Vertical)
    label: str = ""

    def __add__(self, other):
        return TestFunction(self.terms + other.terms, f"{self.label}+{other.label}")

    def __rmul__(self, a):
        return TestFunction([(a * c, T, H, V) for c, T, H, V in self.terms], f"{a}*{self.label}")

    def evaluate(self, t, x, y, z):
        """Values and derivatives: psi, psi_t, psi_x, psi_y, psi_z, psi_zz."""
        shape = np.broadcast(t, x, y, z).shape
        out = [np.zeros(shape) for _ in range(6)]
        for c, T, H, V in self.terms:
            tv, tt = T(t)
            hv, hx, hy = H(x, y)
            vv, vz, vzz = V(z)
            parts = (tv * hv * vv, tt * hv * vv, tv * hx * vv, tv * hy * vv, tv * hv * vz, tv * hv * vzz)
            for o, p in zip(out, parts):
                o += c * np.broadcast_to(p, shape)
        return out


def _outflow_edges(domain, k, tol_tangent=1e-10):
    bc = classify_boundary(domain, k, tol_tangent)
    edges = []
    for e in sorted(set(bc.edge[bc.labels == OUTFLOW].tolist())):
        a = domain.edges[e, 0]
        n = domain.normals[e]
        edges.append((a, -n))
    return edges


def test_family(domain, k, T, tol_tangent=1e-10):
    """The built-in 12-member family (3 time x 2 horizontal x 2 vertical profiles)."""
    edges = _outflow_edges(domain, k, tol_tangent)
    xc = float(np.mean(domain.vertices[:, 0]))
    fam = []
    for it in range(3):
        for ih in range(2):
            for iv in (1, 3):
                Tp, Hp, Vp = _Time(it, T), _Horizontal(edges, ih, xc), _Vertical(iv)
                fam.append(TestFunction([(1.0, Tp, Hp, Vp)], f"{Tp.describe()} * {Hp.describe()} * {Vp.describe()}"))
    return fam


def check_admissible(psi, domain, k, T, tol=1e-10, tol_tangent=1e-10):
    """Raise ConfigError naming the violated constraint."""
    bc = classify_boundary(domain, k, tol_tangent)
    zs = np.linspace(0, 1, 11)
    ts = np.linspace(0, T, 5)
    px, py = bc.points[:, 0], bc.points[:, 1]
    # psi(T) = 0
    X, Y, Z = np.broadcast_arrays(px[:, None], py[:, None], zs[None, :])
    if np.max(np.abs(psi.evaluate(T, X, Y, Z)[0])) > tol:
        raise ConfigError(f"test function {psi.label!r} does not vanish at t = T")
    out = bc.labels == OUTFLOW
    if out.any():
        Tt, Xo, Yo, Zo = np.broadcast_arrays(ts[:, None, None], px[out][None, :, None], py[out][None, :, None], zs[None, None, :])
        if np.max(np.abs(psi.evaluate(Tt, Xo, Yo, Zo)[0])) > tol:
            raise ConfigError(f"test function {psi.label!r} does not vanish on the outflow boundary")
    Tt, Xb, Yb = np.broadcast_arrays(ts[:, None], px[None, :], py[None, :])
    if np.max(np.abs(psi.evaluate(Tt, Xb, Yb, 0.0)[4])) > tol:
        raise ConfigError(f"test function {psi.label!r} has psi_zeta != 0 at zeta = 0")
    if np.max(np.abs(psi.evaluate(Tt, Xb, Yb, 1.0)[0])) > tol:
        raise ConfigError(f"test function {psi.label!r} does not vanish at zeta = 1")


# --------------------------------------------------------------------------
# weak residual


@dataclass
class WeakResidualReport:
    labels: list
    residuals: list
    lhs: list
    rhs: list
    sensitivity: list  # |change| when the last zeta half-cell is dropped
    quadrature: dict

    @property
    def family_max(self):
        return float(max(self.residuals)) if self.residuals else 0.0

    def as_dict(self):
        return {
            "family_max": self.family_max,
            "residuals": dict(zip(self.labels, self.residuals)),
            "cutoff_sensitivity_max": float(max(self.sensitivity)) if self.sensitivity else 0.0,
            "quadrature": self.quadrature,
        }


def _extrapolate_top(F):
    """Replace the zeta = 1 value (last axis) by linear extrapolation."""
    F = F.copy()
    F[..., -1] = 2 * F[..., -2] - F[..., -3]
    return F


def _trap_t(vals, times):
    vals = np.asarray(vals, dtype=float)
    if len(times) < 2:
        return 0.0
    return float(np.trapezoid(vals, times) if hasattr(np, "trapezoid") else np.trapz(vals, times))


def weak_residual(times, slices, grid, model, family=None, check=True, boundary_per_edge=None):
    """|LHS - RHS| of the weak pairing for each test function of the family.

    ``slices`` are the W fields at ``times`` (first one the initial datum).
    """
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    domain, kf, tr = model.domain, model.kfield, model.trace
    if family is None:
        family = test_family(domain, kf.k, T, model.tol_tangent)
    if check:
        for psi in family:
            check_admissible(psi, domain, kf.k, T, tol_tangent=model.tol_tangent)

    X, Y, Z = grid.mesh3d()
    wh = grid.horizontal_weights()[..., None]
    wz = grid.zeta_weights()[None, None, :]
    wz_cut = wz.copy()
    hz = grid.hz
    wz_cut[..., -1] = 0.0
    wz_cut[..., -2] = 0.5 * wz_cut[..., -2]  # drop the half cell next to zeta = 1
    act = grid.active[..., None] & np.ones_like(Z, dtype=bool)
    Xs = np.where(act, X, np.nanmean(grid.xi))
    Ys = np.where(act, Y, np.nanmean(grid.eta))
    k = np.broadcast_to(kf.k(Xs[..., 0], Ys[..., 0]), X.shape[:2])[..., None]
    k_y = np.broadcast_to(kf.k_y(Xs[..., 0], Ys[..., 0]), X.shape[:2])[..., None]

    bc = classify_boundary(domain, kf.k, model.tol_tangent, per_edge=boundary_per_edge or 4 * max(grid.xi.size, grid.eta.size))
    inflow = bc.labels == INFLOW
    bp = bc.points[inflow]
    bw = bc.weights[inflow]
    bkn = bc.k_n[inflow]
    zq = grid.zeta
    wzq = grid.zeta_weights()

    lhs = np.zeros(len(family))
    lhs_cut = np.zeros(len(family))
    per_t = np.zeros((len(family), times.size))
    per_t_cut = np.zeros((len(family), times.size))
    bnd = np.zeros((len(family), times.size))
    for n, (t, W) in enumerate(zip(times, slices)):
        Wa = np.where(act, W, 1.0)
        with np.errstate(divide="ignore"):
            Zf = np.where(Z < 1, 1.0 / Wa, 0.0)
        U = np.broadcast_to(tr.U(t, Xs[..., 0], Ys[..., 0]), X.shape[:2])[..., None]
        U_x = np.broadcast_to(tr.U_x(t, Xs[..., 0], Ys[..., 0]), X.shape[:2])[..., None]
        U_y = np.broadcast_to(tr.U_y(t, Xs[..., 0], Ys[..., 0]), X.shape[:2])[..., None]
        A = np.broadcast_to(model.A(t, Xs, Ys, Z), X.shape)
        Az = np.broadcast_to(model.A_zeta(t, Xs, Ys, Z), X.shape)
        B = np.broadcast_to(model.B(t, Xs, Ys, Z), X.shape)
        if bp.size:
            Tb = np.full((bp.shape[0], zq.size), t)
            W1b = model.data.W1(Tb, bp[:, 0:1], bp[:, 1:2], zq[None, :])
            Ub = np.broadcast_to(tr.U(t, bp[:, 0], bp[:, 1]), bp[:, 0].shape)[:, None]
        for i, psi in enumerate(family):
            p, pt, px, py, pz, pzz = psi.evaluate(t, Xs, Ys, Z)
            core = (
                pt
                + Z * (U_x * p + U * px)
                + Z * ((k_y * U + k * U_y) * p + k * U * py)
                + Az * p + A * pz
                + B * p
            )
            F = _extrapolate_top(Zf * core) - W * pzz
            F = np.where(act, F, 0.0)
            per_t[i, n] = np.sum(F * wh * wz)
            per_t_cut[i, n] = np.sum(F * wh * wz_cut)
            if bp.size:
                pb = psi.evaluate(t, bp[:, 0:1], bp[:, 1:2], zq[None, :])[0]
                with np.errstate(divide="ignore", invalid="ignore"):
                    G = np.where(zq[None, :] < 1, zq[None, :] * Ub * pb / W1b, 0.0)
                G = _extrapolate_top(G)
                bnd[i, n] = float(np.sum((G @ wzq) * bkn * bw))
    init = np.zeros(len(family))
    W0 = slices[0]
    W0a = np.where(act, W0, 1.0)
    with np.errstate(divide="ignore"):
        Z0 = np.where(Z < 1, 1.0 / W0a, 0.0)
    for i, psi in enumerate(family):
        p0 = psi.evaluate(times[0], Xs, Ys, Z)[0]
        G0 = np.where(act, _extrapolate_top(Z0 * p0), 0.0)
        init[i] = np.sum(G0 * wh * wz)
    lhs = np.array([_trap_t(per_t[i], times) for i in range(len(family))])
    lhs_cut = np.array([_trap_t(per_t_cut[i], times) for i in range(len(family))])
    rhs = -init + np.array([_trap_t(bnd[i], times) for i in range(len(family))])
    res = np.abs(lhs - rhs)
    sens = np.abs(np.abs(lhs_cut - rhs) - res)
    return WeakResidualReport(
        [psi.label for psi in family],
        [float(r) for r in res],
        [float(v) for v in lhs],
        [float(v) for v in rhs],
        [float(v) for v in sens],
        {"time_nodes": int(times.size), "zeta_nodes": int(grid.zeta.size), "hz": float(hz),
         "boundary_samples": int(bp.shape[0]), "top_node": "linear extrapolation"},
    )
