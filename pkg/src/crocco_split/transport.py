"""Transport sub-step by backward characteristics.

Along the straight line of slope k(xi, eta) through an anchor, the horizontal
position obeys x' = r zeta U(s, x, y(x)) and W is damped by exp(-m int b1 ds).
A characteristic either survives to the start of the sub-interval inside the
domain (class Q1, value pulled back from the previous slice) or leaves through
the inflow closure at t* (class Q2, value taken from the inflow datum).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, GeometryError, InvariantViolation

INACTIVE, Q1, Q2, TANGENT = 0, 1, 2, 3
CLASS_NAMES = {Q1: "Q1", Q2: "Q2", TANGENT: "tangential"}


@dataclass
class TransportParams:
    ode_substeps: int = 8
    damping_factor: float = 2.0
    tol_cross: float = 1e-12

    def __post_init__(self):
        if int(self.ode_substeps) < 1:
            raise ConfigError("ode_substeps must be >= 1", key="transport.ode_substeps")
        if self.damping_factor not in (1, 2, 1.0, 2.0):
            raise ConfigError("damping_factor must be 1 or 2", key="transport.damping_factor")
        if not self.tol_cross > 0:
            raise ConfigError("tol_cross must be > 0", key="transport.tol_cross")

    def damping_multiplier(self, rate_factor):
        # rate 2 carries the configured factor; a rate-1 run is the plain equation
        return self.damping_factor * rate_factor / 2.0


@dataclass
class CharacteristicPath:
    anchor: tuple  # (t, xi, eta, zeta)
    slope: float
    t_star: float
    foot: tuple
    cls: int
    damping: float  # int b1 ds over [t*, t]
    samples: np.ndarray = field(repr=False)  # (n, 3): s, x, y
    on_outflow: bool = False

    @property
    def class_name(self):
        return CLASS_NAMES[self.cls]


@dataclass
class TransportRecord:
    classes: np.ndarray  # (nx, ny, nz) int8
    t_star: np.ndarray
    k_deviation: float
    collinearity: float
    monotone_foot: bool
    q2_outflow: int
    tangential: int

    def counts(self):
        return {name: int(np.sum(self.classes == c)) for c, name in CLASS_NAMES.items()}

    def coverage(self):
        act = self.classes != INACTIVE
        return float(np.mean(np.isin(self.classes[act], (Q1, Q2, TANGENT)))) if act.any() else 1.0


class _Line:
    """Vectorized family of backward lines, one per (anchor, zeta) pair."""

    def __init__(self, model, xi, eta, zeta, slope, exit, rate, mult):
        self.model = model
        self.xi, self.eta, self.zeta, self.slope = xi, eta, zeta, slope
        self.exit = exit
        self.rate = rate
        self.mult = mult

    def y(self, x):
        return self.eta + self.slope * (x - self.xi)

    def rhs(self, s, x, sel=None, damping=True):
        y = self.eta + self.slope * (x - self.xi) if sel is None else self.eta[sel] + self.slope[sel] * (x - self.xi[sel])
        z = self.zeta if sel is None else self.zeta[sel]
        U = np.broadcast_to(self.model.trace.U(s, x, y), x.shape)
        if not np.all(np.isfinite(U)):
            raise DataError("U is not finite along a characteristic")
        dx = self.rate * z * U
        if not damping:
            return dx, None
        ex = tuple(e if sel is None else e[sel] for e in self.exit)
        b1 = np.broadcast_to(self.model.b1(s, x, y, z, exit=ex), x.shape)
        if not np.all(np.isfinite(b1)):
            raise DataError("b1 is not finite along a characteristic")
        return dx, -b1

    def rk4(self, s0, s1, x0, n, sel=None, damping=True, keep=False):
        """Integrate from s0 to s1 (arrays allowed) in n steps; D = int_{s1}^{s0} b1."""
        s0 = np.broadcast_to(np.asarray(s0, dtype=float), x0.shape)
        s1 = np.broadcast_to(np.asarray(s1, dtype=float), x0.shape)
        h = (s1 - s0) / n
        x = x0.copy()
        D = np.zeros_like(x)
        xs = [x.copy()] if keep else None
        for i in range(n):
            s = s0 + i * h
            k1x, k1d = self.rhs(s, x, sel, damping)
            k2x, k2d = self.rhs(s + h / 2, x + h / 2 * k1x, sel, damping)
            k3x, k3d = self.rhs(s + h / 2, x + h / 2 * k2x, sel, damping)
            k4x, k4d = self.rhs(s + h, x + h * k3x, sel, damping)
            x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            if damping:
                D = D + h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d)
            if keep:
                xs.append(x.copy())
        return x, (D if damping else None), (np.stack(xs, axis=-1) if keep else None)


def _exit_label(domain, kfield, xe, ye, on_edge, tol_tangent):
    n = domain.normals
    ke = np.broadcast_to(kfield.k(xe, ye), xe.shape)
    k_n = n[:, 0] + ke[..., None] * n[:, 1]
    kmin = np.where(on_edge, k_n, np.inf).min(axis=-1)
    kmax = np.where(on_edge, k_n, -np.inf).max(axis=-1)
    # inflow if any incident edge is inflow (closure), outflow only if every one is
    return np.where(kmin < -tol_tangent, -1, np.where(kmax > tol_tangent, 1, 0))


def _bilinear(W, grid, xq, yq, jz):
    """Monotone bilinear pullback of slice W (nx, ny, nz) at (xq, yq, zeta_jz)."""
    xi, eta = grid.xi, grid.eta
    nx, ny = xi.size - 1, eta.size - 1
    fx = (xq - xi[0]) / grid.hx
    fy = (yq - eta[0]) / grid.hy
    i = np.clip(np.floor(fx).astype(int), 0, nx - 1)
    j = np.clip(np.floor(fy).astype(int), 0, ny - 1)
    ax = np.clip(fx - i, 0.0, 1.0)
    ay = np.clip(fy - j, 0.0, 1.0)
    act = grid.active
    wsum = np.zeros_like(xq)
    val = np.zeros_like(xq)
    for di, dj, w in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)), (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
        a = act[i + di, j + dj]
        ww = np.where(a, w, 0.0)
        wsum += ww
        val += ww * np.where(a, W[i + di, j + dj, jz], 0.0)
    out = np.empty_like(xq)
    ok = wsum > 1e-14
    out[ok] = val[ok] / wsum[ok]
    if np.any(~ok):
        X, Y = grid.mesh2d()
        ai, aj = np.nonzero(act)
        for q in np.flatnonzero(~ok):
            d = (X[ai, aj] - xq[q]) ** 2 + (Y[ai, aj] - yq[q]) ** 2
            m = int(np.argmin(d))
            out[q] = W[ai[m], aj[m], jz[q]]
    return out


def _pairs(grid):
    ia, ja = np.nonzero(grid.active)
    nz = grid.zeta.size
    I = np.repeat(ia, nz)
    J = np.repeat(ja, nz)
    K = np.tile(np.arange(nz), ia.size)
    return I, J, K


def transport_advance(
    W_prev, grid, model, t_i, dt_sub, rate_factor=2.0, params=None, U_constant=None, pairs=None
):
    """Advance the slice at t_i to t_i + dt_sub.  Returns ``(W_new, TransportRecord)``.

    ``model`` is a :class:`CoefficientModel`; W1 comes from ``model.data``.
    ``U_constant`` (a float) switches to the closed-form foot time.
    """
    p = params or TransportParams()
    domain, kfield = model.domain, model.kfield
    tol_geom = domain.tol_geom
    t1 = t_i + dt_sub
    I, J, K = pairs if pairs is not None else _pairs(grid)
    xi = grid.xi[I]
    eta = grid.eta[J]
    zeta = grid.zeta[K]
    slope = np.broadcast_to(kfield.k(xi, eta), xi.shape).astype(float)
    xe, ye, on_edge = domain.backward_exit(xi, eta, slope)
    gate_label = _exit_label(domain, kfield, xe, ye, on_edge, model.tol_tangent)
    exit = (xe, ye, gate_label == -1)
    mult = p.damping_multiplier(rate_factor)
    line = _Line(model, xi, eta, zeta, slope, exit, float(rate_factor), mult)
    n = int(p.ode_substeps)

    x_foot, D, xs = line.rk4(t1, t_i, xi.copy(), n, damping=True, keep=True)
    crossed = x_foot < xe - tol_geom
    crossed &= zeta > 0
    t_star = np.full(xi.shape, float(t_i))
    xf = np.where(crossed, xe, x_foot)

    q = np.flatnonzero(crossed)
    if q.size:
        if U_constant is not None:
            ts = t1 - (xi[q] - xe[q]) / (rate_factor * zeta[q] * U_constant)
            t_star[q] = np.clip(ts, t_i, t1)
        else:
            t_star[q] = _bisect_crossing(line, xs[q], q, t1, t_i, n, xe[q], p.tol_cross)
        xq, Dq, _ = line.rk4(t1, t_star[q], xi[q].copy(), n, sel=q, damping=True)
        # the foot is the exit point itself; xq differs from it by the bisection tolerance
        D[q] = Dq
        xf[q] = xe[q]
    yf = line.y(xf)

    cls = np.where(crossed, Q2, Q1).astype(np.int8)
    lab = gate_label
    tang = crossed & (lab == 0)
    outq = crossed & (lab == 1)
    if np.any(outq):
        w = int(np.flatnonzero(outq)[0])
        raise InvariantViolation(
            f"characteristic from ({xi[w]:.6g}, {eta[w]:.6g}, zeta={zeta[w]:.6g}) "
            f"exits through outflow at ({xe[w]:.6g}, {ye[w]:.6g})"
        )
    cls[tang] = TANGENT

    # foot must lie in the closed domain
    inside = domain.contains(xf, yf, tol=1e3 * tol_geom)
    if not np.all(inside):
        w = int(np.flatnonzero(~inside)[0])
        raise GeometryError(f"characteristic foot ({xf[w]:.6g}, {yf[w]:.6g}) lies outside the domain")

    vals = np.empty_like(xi)
    pull = cls != Q2
    vals[pull] = _bilinear(W_prev, grid, xf[pull], yf[pull], K[pull])
    q2 = cls == Q2
    if np.any(q2):
        vals[q2] = model.data.W1(t_star[q2], xf[q2], yf[q2], zeta[q2])
    vals = vals * np.exp(-mult * D)
    vals[K == grid.zeta.size - 1] = 0.0

    # path diagnostics on the RK sample points
    ys = eta[:, None] + slope[:, None] * (xs - xi[:, None])
    kdev = float(np.max(np.abs(np.broadcast_to(kfield.k(xs, ys), xs.shape) - slope[:, None]))) if xs.size else 0.0
    colin = float(np.max(np.abs(ys - eta[:, None] - slope[:, None] * (xs - xi[:, None])))) if xs.size else 0.0
    mono = bool(np.all(np.diff(xs, axis=-1) <= 1e-15 * (1 + np.abs(xs[:, 1:])))) and bool(np.all(xf <= xi + tol_geom))

    W_new = np.full(W_prev.shape, np.nan)
    W_new[I, J, K] = vals
    classes = np.zeros(W_prev.shape, dtype=np.int8)
    classes[I, J, K] = cls
    ts = np.full(W_prev.shape, np.nan)
    ts[I, J, K] = t_star
    rec = TransportRecord(classes, ts, kdev, colin, mono, int(outq.sum()), int(tang.sum()))
    return W_new, rec


def _bisect_crossing(line, xs, q, t1, t_i, n, xe, tol):
    """Crossing time of x(s) = xe, bracketed on the RK sample grid then bisected."""
    h = (t_i - t1) / n
    below = xs < xe[:, None]
    k = np.argmax(below, axis=1)  # first sample past the exit (k >= 1)
    k = np.maximum(k, 1)
    s_a = t1 + (k - 1) * h  # still inside
    x_a = xs[np.arange(xs.shape[0]), k - 1]
    lo = s_a + h  # outside (earlier time)
    hi = s_a
    iters = int(np.ceil(np.log2(max(abs(h), tol) / tol))) + 1
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        xm, _, _ = line.rk4(s_a, mid, x_a.copy(), 1, sel=q, damping=False)
        out = xm < xe
        lo = np.where(out, mid, lo)
        hi = np.where(out, hi, mid)
    return hi


# --------------------------------------------------------------------------
# single-anchor API and diagnostics


def trace_characteristic(model, anchor, t_i, rate_factor=2.0, params=None, n_samples=None):
    """Trace one backward characteristic from ``anchor = (t, xi, eta, zeta)``."""
    p = params or TransportParams()
    t, xi, eta, zeta = (float(a) for a in anchor)
    domain, kfield = model.domain, model.kfield
    kap = float(np.asarray(kfield.k(xi, eta)))
    xe, ye, on_edge = domain.backward_exit(np.array([xi]), np.array([eta]), np.array([kap]))
    lab = _exit_label(domain, kfield, xe, ye, on_edge, model.tol_tangent)
    line = _Line(
        model, np.array([xi]), np.array([eta]), np.array([zeta]), np.array([kap]),
        (xe, ye, lab == -1), float(rate_factor), p.damping_multiplier(rate_factor),
    )
    n = int(n_samples or p.ode_substeps)
    xf, D, xs = line.rk4(t, t_i, np.array([xi]), n, keep=True)
    t_star = float(t_i)
    crossed = bool(xf[0] < xe[0] - domain.tol_geom and zeta > 0)
    if crossed:
        t_star = float(_bisect_crossing(line, xs, np.array([0]), t, t_i, n, xe, p.tol_cross)[0])
        xq, D, xs = line.rk4(t, t_star, np.array([xi]), n, keep=True)
        xf = xe
    s = np.linspace(t, t_star, xs.shape[-1])
    x_s = xs[0]
    samples = np.column_stack([s, x_s, eta + kap * (x_s - xi)])
    foot = (float(xf[0]), float(eta + kap * (xf[0] - xi)))
    cls = Q1
    if crossed:
        cls = {-1: Q2, 0: TANGENT, 1: Q2}[int(lab[0])]
    return CharacteristicPath(
        (t, xi, eta, zeta), kap, t_star, foot, cls, float(D[0]), samples, bool(crossed and lab[0] == 1)
    )


def classify_point(path):
    """Q1 or Q2 label for a traced path; a Q2 foot on strict outflow is an error."""
    if path.on_outflow:
        raise InvariantViolation(f"Q2 foot {path.foot} lies on the outflow boundary")
    return path.class_name


def check_k_constancy(path, k):
    s = path.samples
    kv = np.broadcast_to(k(s[:, 1], s[:, 2]), s[:, 1].shape)
    return float(np.max(np.abs(kv - path.slope)))


def collinearity_residual(path):
    s = path.samples
    _, xi, eta, _ = path.anchor
    return float(np.max(np.abs(s[:, 2] - eta - path.slope * (s[:, 1] - xi))))
