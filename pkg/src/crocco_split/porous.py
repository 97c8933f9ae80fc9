"""Column solver for the regularized porous-medium sub-step and its bound checks.

Every (xi, eta) column is advanced independently:

    dW/dtau = r [ (W^2 + eps) W_zz - A W_z - b W + S ],
    W W_z = g at zeta = 0,   W = 0 at zeta = 1,

with a theta-weighted implicit step (theta = 1 is backward Euler) and Newton
on the full nonlinear residual, the flux condition included as row 0.
Columns are processed as a batch; convergence and step bisection are decided
per column so the result for a column never depends on its neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coefficients import ratio_to_linear
from .errors import ConfigError, PositivityError, SolverError

_CHUNK = 256


@dataclass
class PorousParams:
    epsilon: float = 1e-6
    inner_steps: int = 8
    theta: float = 1.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    max_bisections: int = 4
    source: Optional[Callable] = None  # S(t, zeta, cols) -> array like W

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0", key="porous.epsilon")
        if int(self.inner_steps) < 1:
            raise ConfigError("inner_steps must be >= 1", key="porous.inner_steps")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0.5, 1]", key="porous.theta")
        if not (self.newton_tol > 0 and self.newton_max_iter >= 1):
            raise ConfigError("Newton tolerance and iteration cap must be positive", key="porous")
        if self.max_bisections < 0:
            raise ConfigError("max_bisections must be >= 0", key="porous.max_bisections")


@dataclass
class ColumnState:
    """W on the zeta grid for a batch of columns (zeta on the last axis)."""

    W: np.ndarray
    zeta: np.ndarray
    t: float

    def check(self, tol=0.0):
        W = np.atleast_2d(self.W)
        if np.any(np.abs(W[:, -1]) > tol):
            raise SolverError("W(zeta=1) must vanish")
        bad = np.flatnonzero(np.any(W[:, :-1] <= 0, axis=1))
        if bad.size:
            raise PositivityError(f"W <= 0 below zeta=1 in column {int(bad[0])}", column=int(bad[0]))


@dataclass
class PorousStats:
    newton_iters: int = 0
    bisections: int = 0
    steps: int = 0
    max_residual: float = 0.0
    per_column_bisections: dict = field(default_factory=dict)

    def merge(self, other):
        self.newton_iters = max(self.newton_iters, other.newton_iters)
        self.bisections += other.bisections
        self.steps += other.steps
        self.max_residual = max(self.max_residual, other.max_residual)


def _spatial(W, A, b, S, eps, h):
    """Interior operator F at nodes 1..M-1 (returned on all nodes, ends zero)."""
    F = np.zeros_like(W)
    Wc = W[:, 1:-1]
    d2 = (W[:, 2:] - 2 * Wc + W[:, :-2]) / h**2
    d1 = (W[:, 2:] - W[:, :-2]) / (2 * h)
    F[:, 1:-1] = (Wc**2 + eps) * d2 - A[:, 1:-1] * d1 - b[:, 1:-1] * Wc
    if S is not None:
        F[:, 1:-1] += S[:, 1:-1]
    return F


_W_FLOOR = 1e-300


def _robin(W, g, h):
    # W W_z = g divided by W(0) > 0: same solutions, without the spurious W(0) = 0 root
    return (-3 * W[:, 0] + 4 * W[:, 1] - W[:, 2]) / (2 * h) - g / np.maximum(W[:, 0], _W_FLOOR)


def _residual(W, rhs_old, A, b, S, g, eps, h, c):
    """c = r * dtau * theta; rhs_old holds W_old + r dtau (1-theta) F(W_old)."""
    R = np.empty_like(W[:, :-1])
    R[:, 1:] = (W[:, 1:-1] - rhs_old[:, 1:-1]) - c * _spatial(W, A, b, S, eps, h)[:, 1:-1]
    R[:, 0] = _robin(W, g, h)
    return R


def _jacobian(W, A, b, g, eps, h, c):
    n, m1 = W.shape
    m = m1 - 1  # unknowns 0..M-1
    J = np.zeros((n, m, m))
    Wc = W[:, 1:-1]
    d2 = (W[:, 2:] - 2 * Wc + W[:, :-2]) / h**2
    diff = (Wc**2 + eps) / h**2
    adv = A[:, 1:-1] / (2 * h)
    rows = np.arange(1, m)
    J[:, rows, rows - 1] = -c * (diff + adv)
    J[:, rows, rows] = 1 - c * (2 * Wc * d2 - 2 * diff - b[:, 1:-1])
    up = rows[:-1]
    J[:, up, up + 1] = (-c * (diff - adv))[:, :-1]
    J[:, 0, 0] = -3 / (2 * h) + g / np.maximum(W[:, 0], _W_FLOOR) ** 2
    J[:, 0, 1] = 4 / (2 * h)
    J[:, 0, 2] += -1 / (2 * h)
    return J


def _newton_step(W_old, zeta, coeffs, cols, t0, dt, r, p):
    """One theta step for the given columns.  Returns (W_new, ok mask, iters, res)."""
    h = zeta[1] - zeta[0]
    th = p.theta
    A1, b1, g1 = coeffs(t0 + dt, cols)
    A1 = np.broadcast_to(A1, W_old.shape)
    b1 = np.broadcast_to(b1, W_old.shape)
    S1 = p.source(t0 + dt, zeta, cols) if p.source else None
    rhs_old = W_old.copy()
    if th < 1.0:
        A0, b0, _ = coeffs(t0, cols)
        S0 = p.source(t0, zeta, cols) if p.source else None
        F0 = _spatial(
            W_old, np.broadcast_to(A0, W_old.shape), np.broadcast_to(b0, W_old.shape), S0, p.epsilon, h
        )
        rhs_old = rhs_old + r * dt * (1 - th) * F0
    c = r * dt * th
    g1 = np.broadcast_to(np.asarray(g1, dtype=float), (W_old.shape[0],))

    W = W_old.copy()
    W[:, -1] = 0.0
    active = np.ones(W.shape[0], dtype=bool)
    done = np.zeros(W.shape[0], dtype=bool)
    res = np.zeros(W.shape[0])
    it = 0
    scale = np.maximum(1.0, np.abs(W_old).max(axis=1))
    while active.any() and it < p.newton_max_iter:
        idx = np.flatnonzero(active)
        S_a = S1[idx] if S1 is not None else None
        R = _residual(W[idx], rhs_old[idx], A1[idx], b1[idx], S_a, g1[idx], p.epsilon, h, c)
        rn = np.abs(R).max(axis=1)
        res[idx] = rn
        small = rn <= p.newton_tol * scale[idx]
        done[idx[small]] = True
        active[idx[small]] = False
        idx = idx[~small]
        if idx.size == 0:
            break
        it += 1
        for s in range(0, idx.size, _CHUNK):
            blk = idx[s : s + _CHUNK]
            J = _jacobian(W[blk], A1[blk], b1[blk], g1[blk], p.epsilon, h, c)
            Rb = R[~small][s : s + _CHUNK]
            with np.errstate(all="ignore"):
                try:
                    dW = np.linalg.solve(J, -Rb[..., None])[..., 0]
                except np.linalg.LinAlgError:
                    dW = np.stack([_safe_solve(Ji, -Ri) for Ji, Ri in zip(J, Rb)])
            bad = ~np.all(np.isfinite(dW), axis=1)
            dW[bad] = 0.0
            active[blk[bad]] = False  # singular: leave unconverged
            # fraction-to-boundary damping keeps iterates positive below zeta = 1
            Wb = W[blk, :-1]
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(dW < 0, -0.9 * Wb / dW, np.inf)
            lam = np.minimum(1.0, np.where(Wb > 0, lim, np.inf).min(axis=1))
            dW *= lam[:, None]
            W[blk, :-1] += dW
            conv = (np.abs(dW).max(axis=1) <= p.newton_tol * scale[blk]) & (lam == 1.0)
            conv &= ~bad
            done[blk[conv]] = True
            active[blk[conv]] = False
    ok = done & np.all(np.isfinite(W), axis=1) & np.all(W[:, :-1] > 0, axis=1)
    return W, ok, it, res


def _safe_solve(J, R):
    try:
        return np.linalg.solve(J, R)
    except np.linalg.LinAlgError:
        return np.full_like(R, np.nan)


def _advance_cols(W, zeta, coeffs, cols, t0, dt, r, p, depth, stats):
    W_new, ok, it, res = _newton_step(W, zeta, coeffs, cols, t0, dt, r, p)
    stats.newton_iters = max(stats.newton_iters, it)
    stats.steps += 1
    if np.any(ok):
        stats.max_residual = max(stats.max_residual, float(res[ok].max()))
    if np.all(ok):
        return W_new
    fail = np.flatnonzero(~ok)
    if depth >= p.max_bisections:
        col = int(cols[fail[0]])
        Wf = W_new[fail[0]]
        if np.all(np.isfinite(Wf)) and np.any(Wf[:-1] <= 0):
            raise PositivityError(f"porous step produced W <= 0 in column {col} at t={t0 + dt:.6g}", column=col)
        raise SolverError(
            f"Newton did not converge in column {col} at t={t0 + dt:.6g} after {depth} bisections"
        )
    stats.bisections += fail.size
    for f in fail:
        stats.per_column_bisections[int(cols[f])] = max(
            stats.per_column_bisections.get(int(cols[f]), 0), depth + 1
        )
    sub = cols[fail]
    half = 0.5 * dt
    Wm = _advance_cols(W[fail], zeta, coeffs, sub, t0, half, r, p, depth + 1, stats)
    W_new[fail] = _advance_cols(Wm, zeta, coeffs, sub, t0 + half, half, r, p, depth + 1, stats)
    return W_new


def porous_advance(W, zeta, coeffs, t0, dt_sub, params=None, rate_factor=1.0, cols=None):
    """Advance a batch of columns over [t0, t0 + dt_sub].

    ``W`` has shape (n_columns, n_zeta).  ``coeffs(t, cols)`` returns
    ``(A, b, g)`` for the requested column indices, with A and b shaped like
    the corresponding rows of W (or broadcastable) and g of shape (n,).
    Returns ``(W_new, PorousStats)``.
    """
    p = params or PorousParams()
    if rate_factor not in (1, 2, 1.0, 2.0):
        raise ConfigError("rate_factor must be 1 or 2")
    W = np.array(np.atleast_2d(W), dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if zeta.size < 3:
        raise ConfigError("porous solver needs at least three zeta nodes")
    if not np.allclose(np.diff(zeta), zeta[1] - zeta[0], rtol=1e-9, atol=1e-14):
        raise ConfigError("porous solver needs a uniform zeta grid")
    cols = np.arange(W.shape[0]) if cols is None else np.asarray(cols)
    stats = PorousStats()
    n = int(p.inner_steps)
    dt = dt_sub / n
    for i in range(n):
        W = _advance_cols(W, zeta, coeffs, cols, t0 + i * dt, dt, float(rate_factor), p, 0, stats)
    return W, stats


# --------------------------------------------------------------------------
# a-priori bound checks


def phi(zeta):
    zeta = np.asarray(zeta, dtype=float)
    return np.exp(0.5 * np.pi * zeta) * np.sin(0.5 * np.pi * (1 - zeta))


def _ratio_to_phi(W, zeta):
    """W / phi with the zeta=1 limit W_z(1) / phi'(1) = -W_z(1) / (pi/2 e^{pi/2})."""
    W = np.asarray(W, dtype=float)
    out = np.empty_like(W)
    out[..., :-1] = W[..., :-1] / phi(zeta[:-1])
    out[..., -1] = ratio_to_linear(W, zeta)[..., -1] / (0.5 * np.pi * np.exp(0.5 * np.pi))
    return out


@dataclass
class BarrierConstants:
    theta0: float
    C1: float
    M1: float
    beta: float
    beta_default: float

    def lower(self, t, zeta):
        return self.theta0 * np.exp(-self.beta * t) * phi(zeta)

    def upper(self, t, zeta):
        return self.C1 * np.exp(self.M1 * t) * (1 - np.asarray(zeta))

    def as_dict(self):
        return {
            "theta0": self.theta0, "C1": self.C1, "M1": self.M1,
            "beta": self.beta, "beta_default": self.beta_default,
        }


def barrier_constants(W0, zeta, A, b, A_zeta, g, beta=None, W1=None, B=None):
    """Constants of the two-sided barrier estimate from gridded data.

    A, b, A_zeta are arrays with zeta on the last axis (any leading shape,
    NaN entries ignored); g holds p_x/U samples.  Passing the inflow datum W1
    and B switches to the extended constants that also cover the transport
    sub-step (min over both data, b1 = B - b folded into M1).
    """
    W0 = np.asarray(W0, dtype=float)
    theta0 = float(np.nanmin(_ratio_to_phi(W0, zeta)))
    C1 = max(float(np.nanmax(ratio_to_linear(W0, zeta))), float(np.sqrt(np.nanmax(np.abs(g)))))
    M1 = float(np.nanmax(np.abs(ratio_to_linear(A, zeta) - b)))
    beta_default = float(np.nanmax(np.abs(A_zeta + b))) + 1.0
    if W1 is not None:
        W1 = np.asarray(W1, dtype=float)
        theta0 = min(theta0, float(np.nanmin(_ratio_to_phi(W1, zeta))))
        C1 = max(C1, float(np.nanmax(ratio_to_linear(W1, zeta))))
        if B is not None:
            M1 = max(M1, float(np.nanmax(np.abs(B - b))))
    return BarrierConstants(theta0, C1, M1, beta_default if beta is None else float(beta), beta_default)


@dataclass
class BoundCheck:
    t: float
    lower_margin: float
    upper_margin: float
    ok: bool
    worst_lower: Optional[tuple] = None
    worst_upper: Optional[tuple] = None


def comparison_bounds(W, t, zeta, consts, t_eff=None, tol=0.0):
    """Check lower <= W <= upper at time t (t_eff scales the exponents).

    Margins are the minima of (W - lower) and (upper - W) over all nodes.
    """
    W = np.asarray(W, dtype=float)
    te = t if t_eff is None else t_eff
    lo = consts.lower(te, zeta)
    up = consts.upper(te, zeta)
    ml = W - lo
    mu = up - W
    lm = float(np.nanmin(ml))
    um = float(np.nanmin(mu))
    wl = np.unravel_index(int(np.nanargmin(ml)), ml.shape)
    wu = np.unravel_index(int(np.nanargmin(mu)), mu.shape)
    return BoundCheck(
        float(t), lm, um, bool(lm >= -tol and um >= -tol),
        tuple(int(i) for i in wl), tuple(int(i) for i in wu),
    )


def gradient_bound(states, zeta):
    """Sup-norm of W_zeta over a sequence of states (second-order differences)."""
    out = 0.0
    for W in states:
        W = np.asarray(W, dtype=float)
        d = np.gradient(W, zeta, axis=-1, edge_order=2)
        out = max(out, float(np.nanmax(np.abs(d))))
    return out


@dataclass
class VariationCheck:
    lhs_max: float
    worst_gap: float  # max of LHS - RHS
    ok: bool


def zeta_variation_bound(W_t, W_0, tol=1e-10):
    """Total zeta-variation of W(t) against that of W0 plus the rise of W(., 0)."""
    W_t = np.asarray(W_t, dtype=float)
    W_0 = np.asarray(W_0, dtype=float)
    lhs = np.abs(np.diff(W_t, axis=-1)).sum(axis=-1)
    rhs = np.abs(np.diff(W_0, axis=-1)).sum(axis=-1) + W_t[..., 0] - W_0[..., 0]
    gap = float(np.nanmax(lhs - rhs))
    return VariationCheck(float(np.nanmax(lhs)), gap, bool(gap <= tol))
