"""Structure data (k, U, p) and the Crocco-side coefficients.

A, B come from the outer flow and the direction field; b is the coefficient
that lets the porous sub-step reproduce the inflow data, and b1 = B - b is the
damping left to the transport sub-step.  Derivatives are either analytic
callables or centered second-order differences of the base function.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DataError
from .geometry import INFLOW, classify_boundary

Fn = Callable[..., np.ndarray]


def _central(f, argnum, h):
    def d(*args):
        lo = list(args)
        hi = list(args)
        lo[argnum] = np.asarray(args[argnum], dtype=float) - h
        hi[argnum] = np.asarray(args[argnum], dtype=float) + h
        return (np.asarray(f(*hi)) - np.asarray(f(*lo))) / (2 * h)

    return d


@dataclass
class KField:
    """Direction field k(xi, eta) and its first derivatives."""

    k: Fn
    k_x: Fn
    k_y: Fn
    analytic: bool = True
    fd_step: float = 0.0

    @classmethod
    def from_function(cls, k, fd_step=1e-4):
        return cls(k, _central(k, 0, fd_step), _central(k, 1, fd_step), False, fd_step)

    @property
    def default_tol(self):
        return 1e-8 if self.analytic else 10 * self.fd_step**2


@dataclass
class EulerTrace:
    """Outer-flow trace U(t, x, y) > 0 with pressure gradient (p_x, p_y)."""

    U: Fn
    U_t: Fn
    U_x: Fn
    U_y: Fn
    p_x: Fn
    p_y: Fn
    analytic: bool = True
    fd_step: float = 0.0

    @classmethod
    def from_functions(cls, U, p_x, p_y, fd_step=1e-4):
        return cls(
            U,
            _central(U, 0, fd_step),
            _central(U, 1, fd_step),
            _central(U, 2, fd_step),
            p_x,
            p_y,
            False,
            fd_step,
        )

    @property
    def default_tol(self):
        return 1e-8 if self.analytic else 10 * self.fd_step**2


@dataclass
class BoundaryData:
    """Initial data W0(x, y, zeta) and a globally defined inflow function W1(t, x, y, zeta).

    Only the restriction of W1 to the inflow boundary is physical; the
    interior values feed the coefficient b.
    """

    W0: Fn
    W1: Fn
    W1_t: Fn
    W1_z: Fn
    W1_zz: Fn
    W1_tz: Fn
    extension: str = "analytic"

    @classmethod
    def from_functions(cls, W0, W1, fd_step=1e-4):
        W1_t = _central(W1, 0, fd_step)
        W1_z = _central(W1, 3, fd_step)
        return cls(
            W0,
            W1,
            W1_t,
            W1_z,
            _central(W1_z, 3, fd_step),
            _central(W1_z, 0, fd_step),
            extension="finite-difference",
        )


# --------------------------------------------------------------------------
# structure checks


def _active_nodes(grid):
    X, Y = grid.mesh2d()
    return X[grid.active], Y[grid.active]


def burgers_residual(k, grid):
    """Sup-norm of k_x + k k_y over the active horizontal nodes."""
    x, y = _active_nodes(grid)
    r = np.asarray(k.k_x(x, y)) + np.asarray(k.k(x, y)) * np.asarray(k.k_y(x, y))
    return float(np.max(np.abs(np.broadcast_to(r, x.shape))))


def check_H2(trace, k, grid, times=None):
    """Sup-norms of the outer momentum residual and the pressure alignment residual."""
    x, y = _active_nodes(grid)
    if times is None:
        times = grid.spec.times
    mom = 0.0
    align = 0.0
    for t in np.atleast_1d(times):
        U = trace.U(t, x, y)
        kk = k.k(x, y)
        r1 = trace.U_t(t, x, y) + U * trace.U_x(t, x, y) + kk * U * trace.U_y(t, x, y)
        r1 = r1 + trace.p_x(t, x, y)
        r2 = trace.p_y(t, x, y) - kk * trace.p_x(t, x, y)
        mom = max(mom, float(np.max(np.abs(np.broadcast_to(r1, x.shape)))))
        align = max(align, float(np.max(np.abs(np.broadcast_to(r2, x.shape)))))
    return mom, align


def check_favorable_pressure(trace, grid, times=None):
    """Largest p_x over the grid; favorable iff <= 0."""
    x, y = _active_nodes(grid)
    if times is None:
        times = grid.spec.times
    worst = -np.inf
    for t in np.atleast_1d(times):
        worst = max(worst, float(np.max(np.broadcast_to(trace.p_x(t, x, y), x.shape))))
    return worst


def coeff_A(U, U_t, p_x, zeta):
    """A = -zeta(1-zeta) U_t/U - (1-zeta^2) p_x/U; vanishes identically at zeta = 1."""
    U = np.asarray(U, dtype=float)
    if np.any(U <= 0):
        raise DataError("outer speed U must be positive")
    return -zeta * (1 - zeta) * U_t / U - (1 - zeta) * (1 + zeta) * p_x / U


def coeff_A_zeta(U, U_t, p_x, zeta):
    return -(1 - 2 * zeta) * U_t / U + 2 * zeta * p_x / U


def coeff_B(U, U_t, U_x, U_y, k, k_y, zeta):
    U = np.asarray(U, dtype=float)
    if np.any(U <= 0):
        raise DataError("outer speed U must be positive")
    return U_t / U + zeta * (U_x + k * U_y) - k_y * zeta * U


def coeff_b(W1, W1_t, W1_z, W1_zz, A_inflow, f, zeta, W1_tz=None, A_inflow_z=None):
    """b = -f/W1 (W1_t - W1^2 W1_zz + A|inflow W1_z).

    At zeta = 1 the quotient is 0/0; the limit -f (W1_tz/W1_z + A_z|inflow) is
    used there when the zeta-derivatives are given, otherwise quadratic
    extrapolation along the last axis.
    """
    W1 = np.asarray(W1, dtype=float)
    zeta = np.broadcast_to(zeta, np.broadcast(W1, zeta).shape)
    top = zeta >= 1.0
    W1b = np.broadcast_to(W1, zeta.shape)
    if np.any(W1b[~top] <= 0):
        raise DataError("inflow data W1 must be positive for zeta < 1")
    num = W1_t - W1**2 * W1_zz + A_inflow * W1_z
    with np.errstate(divide="ignore", invalid="ignore"):
        b = -f * num / W1
    b = np.array(np.broadcast_to(b, zeta.shape), dtype=float)
    f_b = np.broadcast_to(f, zeta.shape)
    if np.any(top):
        if W1_tz is not None and A_inflow_z is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = -f * (W1_tz / W1_z + A_inflow_z)
            lim = np.broadcast_to(lim, zeta.shape)
            b[top] = lim[top]
        else:
            b[..., -1] = 3 * b[..., -2] - 3 * b[..., -3] + b[..., -4]
        b[top & (f_b == 0)] = 0.0
    if not np.all(np.isfinite(b)):
        raise DataError("b is not finite; inflow extension is not O(1-zeta) near zeta=1")
    return b


def ratio_to_linear(W, zeta):
    """W/(1-zeta) on the zeta axis (last), with the zeta=1 limit -W_z(1) from a
    one-sided second-order difference."""
    W = np.asarray(W, dtype=float)
    h = zeta[-1] - zeta[-2]
    R = np.empty_like(W)
    R[..., :-1] = W[..., :-1] / (1 - zeta[:-1])
    R[..., -1] = (4 * W[..., -2] - W[..., -3] - 3 * W[..., -1]) / (2 * h)
    return R


@dataclass
class DataBoundCertificate:
    C0: float
    ok: bool
    location: Optional[tuple] = None
    message: str = ""


def check_data_bounds(W0_grid, W1_grid, zeta):
    """Smallest C0 >= 1 with C0^-1 (1-zeta) <= W0, W1 <= C0 (1-zeta) at every node.

    Arrays carry zeta on the last axis.  The zeta=1 node enters through the
    slope limit so data vanishing faster than (1-zeta) is caught.
    """
    C0 = 1.0
    for name, W in (("W0", W0_grid), ("W1", W1_grid)):
        W = np.asarray(W, dtype=float)
        inner = W[..., :-1]
        if np.any(~np.isfinite(inner)) or np.any(inner <= 0):
            bad = np.argwhere(~(inner > 0))[0]
            return DataBoundCertificate(
                np.inf, False, tuple(int(i) for i in bad), f"{name} <= 0 at node {tuple(bad)} with zeta<1"
            )
        R = ratio_to_linear(W, zeta)
        lo = float(R.min())
        if lo <= 1e-12:
            bad = np.unravel_index(int(np.argmin(R)), R.shape)
            return DataBoundCertificate(
                np.inf,
                False,
                tuple(int(i) for i in bad),
                f"{name}/(1-zeta) -> 0: lower bound violated as zeta -> 1",
            )
        C0 = max(C0, float(R.max()), 1.0 / lo)
    return DataBoundCertificate(C0, True)


# --------------------------------------------------------------------------
# cutoff and the full coefficient model


def bspline_cutoff(s):
    """C^2 cubic B-spline cutoff: 1 at s=0, 0 for s >= 1, even in s."""
    u = 2 * np.abs(np.asarray(s, dtype=float))
    out = np.zeros_like(u)
    m1 = u <= 1
    m2 = (u > 1) & (u < 2)
    out[m1] = 2.0 / 3.0 - u[m1] ** 2 + 0.5 * u[m1] ** 3
    out[m2] = (2 - u[m2]) ** 3 / 6.0
    return 1.5 * out


class Cutoff:
    """f(x, y) >= 0 with f = 1 on the inflow boundary.

    mode ``bump``: chi(dist to inflow / d0); ``one``: f = 1; ``zero``: f = 0.
    """

    def __init__(self, domain, k, mode="bump", d0=None, tol_tangent=1e-10):
        self.mode = mode
        self.d0 = d0 if d0 is not None else 0.25 * domain.diameter
        bc = classify_boundary(domain, k, tol_tangent=tol_tangent)
        self.classification = bc
        inflow = bc.labels == INFLOW
        # maximal runs of consecutive inflow samples on one edge become single segments
        segs = []
        start = None
        for i in range(len(bc.points)):
            if inflow[i] and start is None:
                start = i
            nxt = i + 1
            run_ends = (
                not inflow[i]
                or nxt >= len(bc.points)
                or not inflow[nxt]
                or bc.edge[nxt] != bc.edge[i]
            )
            if start is not None and inflow[i] and run_ends:
                segs.append((bc.points[start], bc.points[i]))
                start = None
            elif not inflow[i]:
                start = None
        self.segments = np.array(segs, dtype=float).reshape(-1, 2, 2)

    def distance(self, x, y):
        from .geometry import _segment_distance

        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(self.segments) == 0:
            return np.full(np.broadcast(x, y).shape, np.inf)
        s = self.segments
        flat_x = np.ravel(np.broadcast_to(x, np.broadcast(x, y).shape))
        flat_y = np.ravel(np.broadcast_to(y, np.broadcast(x, y).shape))
        out = np.empty(flat_x.shape)
        step = 4096
        for lo in range(0, flat_x.size, step):
            px = flat_x[lo:lo + step, None]
            py = flat_y[lo:lo + step, None]
            d = _segment_distance(px, py, s[:, 0, 0], s[:, 0, 1], s[:, 1, 0], s[:, 1, 1])
            out[lo:lo + step] = d.min(axis=1)
        return out.reshape(np.broadcast(x, y).shape)

    def __call__(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        if self.mode == "one":
            return np.ones(shape)
        if self.mode == "zero":
            return np.zeros(shape)
        return bspline_cutoff(self.distance(x, y) / self.d0)


@dataclass
class CoefficientSet:
    """Coefficients sampled on the full (xi, eta, zeta) grid at one time."""

    t: float
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    b1: np.ndarray
    f: np.ndarray
    g: np.ndarray  # p_x / U on (xi, eta)

    @property
    def M0(self):
        return float(np.nanmax(np.abs(self.b)))


class CoefficientModel:
    """Point evaluation of A, B, b, b1 and g for a scenario on a domain.

    The inflow trace of A is pulled back along the straight line of constant k
    through each point; where that line does not reach the inflow closure the
    cutoff is forced to zero.
    """

    def __init__(self, domain, kfield, trace, data, cutoff_mode="bump", d0=None, tol_tangent=1e-10):
        self.domain = domain
        self.kfield = kfield
        self.trace = trace
        self.data = data
        self.tol_tangent = tol_tangent
        self.cutoff = Cutoff(domain, kfield.k, cutoff_mode, d0, tol_tangent)

    # -- geometry of the pullback --
    def exit_info(self, x, y):
        """Exit point of the backward constant-k line and whether it lies on the inflow closure."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        slope = np.broadcast_to(self.kfield.k(x, y), x.shape)
        xe, ye, on_edge = self.domain.backward_exit(x, y, slope)
        n = self.domain.normals
        ke = np.broadcast_to(self.kfield.k(xe, ye), xe.shape)
        k_n = n[:, 0] + ke[..., None] * n[:, 1]
        k_n = np.where(on_edge, k_n, np.inf).min(axis=-1)
        return xe, ye, k_n < -self.tol_tangent

    def f(self, x, y, inflow_gate=None):
        fv = self.cutoff(x, y)
        if inflow_gate is not None:
            fv = np.where(inflow_gate, fv, 0.0)
        return fv

    # -- coefficients --
    def A(self, t, x, y, z):
        tr = self.trace
        return coeff_A(tr.U(t, x, y), tr.U_t(t, x, y), tr.p_x(t, x, y), z)

    def A_zeta(self, t, x, y, z):
        tr = self.trace
        return coeff_A_zeta(tr.U(t, x, y), tr.U_t(t, x, y), tr.p_x(t, x, y), z)

    def B(self, t, x, y, z):
        tr, kf = self.trace, self.kfield
        return coeff_B(
            tr.U(t, x, y), tr.U_t(t, x, y), tr.U_x(t, x, y), tr.U_y(t, x, y),
            kf.k(x, y), kf.k_y(x, y), z,
        )

    def g(self, t, x, y):
        return self.trace.p_x(t, x, y) / self.trace.U(t, x, y)

    def b(self, t, x, y, z, exit=None):
        """``exit`` = (xe, ye, gate) as returned by :meth:`exit_info`, reused along a line."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast(x, y, z).shape
        if exit is None:
            exit = self.exit_info(x, y)
        xe, ye, gate = exit
        fv = self.f(x, y, gate)
        if not np.any(fv != 0):
            return np.zeros(shape)
        d = self.data
        A_in = self.A(t, xe, ye, z)
        A_in_z = self.A_zeta(t, xe, ye, z)
        return coeff_b(
            d.W1(t, x, y, z), d.W1_t(t, x, y, z), d.W1_z(t, x, y, z), d.W1_zz(t, x, y, z),
            A_in, fv, z, W1_tz=d.W1_tz(t, x, y, z), A_inflow_z=A_in_z,
        )

    def b1(self, t, x, y, z, exit=None):
        return self.B(t, x, y, z) - self.b(t, x, y, z, exit)

    # -- grid sampling --
    def grid_exit(self, grid):
        X, Y = grid.mesh2d()
        xe = np.full(X.shape, np.nan)
        ye = np.full(X.shape, np.nan)
        gate = np.zeros(X.shape, dtype=bool)
        a = grid.active
        xe[a], ye[a], gate[a] = self.exit_info(X[a], Y[a])
        return xe, ye, gate

    def on_grid(self, t, grid, exit=None):
        X, Y, Z = grid.mesh3d()
        if exit is None:
            exit = self.grid_exit(grid)
        xe, ye, gate = (np.broadcast_to(np.asarray(e)[..., None], X.shape) for e in exit)
        shape = X.shape
        A = _full(self.A(t, X, Y, Z), shape)
        B = _full(self.B(t, X, Y, Z), shape)
        fv = _full(self.f(X[..., 0], Y[..., 0], exit[2]), shape[:2])
        xe_s = np.where(np.isfinite(xe), xe, X)
        ye_s = np.where(np.isfinite(ye), ye, Y)
        b = self.b(t, X, Y, Z, exit=(xe_s, ye_s, gate))
        b = _full(b, shape)
        g = _full(self.g(t, X[..., 0], Y[..., 0]), shape[:2])
        inactive = ~grid.active
        for arr in (A, B, b):
            arr[inactive] = np.nan
        g[inactive] = np.nan
        return CoefficientSet(t, A, B, b, B - b, fv, g)


def _full(a, shape):
    return np.array(np.broadcast_to(np.asarray(a, dtype=float), shape), dtype=float)
