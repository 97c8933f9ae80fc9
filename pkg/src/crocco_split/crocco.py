"""Maps between physical velocity profiles and the Crocco unknown W.

Forward: zeta = u/U, W = u_z/U at the height where u = zeta U.
Inverse: z(zeta) = int_0^zeta dz'/W, then u = zeta U, v = k u and w from
incompressibility.  The logarithmic singularity of z at zeta = 1 is handled
analytically (subtract the linear-wall part) rather than by truncation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .coefficients import ratio_to_linear
from .errors import DataError


@dataclass
class VelocityProfile:
    z: np.ndarray
    u: np.ndarray
    U: float
    tol_tail: float = 1e-3

    def check(self, zeta_max=None):
        z = np.asarray(self.z, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if z.shape != u.shape or z.ndim != 1 or z.size < 4:
            raise DataError("profile needs matching 1-D z and u arrays with at least 4 samples")
        if not self.U > 0:
            raise DataError("trace value U must be positive")
        if abs(u[0]) > 1e-14 * self.U:
            raise DataError("profile must satisfy u(0) = 0")
        bad = np.flatnonzero(np.diff(u) <= 0)
        if bad.size:
            raise DataError(f"u is not strictly increasing in z (first violation at index {int(bad[0]) + 1})")
        top = u[-1] / self.U
        if zeta_max is not None and top < zeta_max:
            raise DataError(
                f"profile tail unresolved: u(z_max)/U = {top:.6g} < requested zeta {zeta_max:.6g}"
            )
        if abs(1 - top) > self.tol_tail and zeta_max is None:
            raise DataError(f"u(z_max) is not within {self.tol_tail} of U")


def crocco_forward(profile, zeta):
    """W on the zeta grid from one monotone velocity profile; W(1) = 0 exactly."""
    zeta = np.asarray(zeta, dtype=float)
    inner = zeta[zeta < 1.0]
    profile.check(zeta_max=float(inner.max()))
    z = np.asarray(profile.z, dtype=float)
    u = np.asarray(profile.u, dtype=float) / profile.U
    spl = CubicSpline(z, u)
    dspl = spl.derivative()
    target = inner
    zs = np.interp(target, u, z)
    # polish the linear inverse with a few safeguarded Newton steps on the spline
    for _ in range(8):
        d = dspl(zs)
        step = np.where(d > 0, (spl(zs) - target) / np.where(d > 0, d, 1.0), 0.0)
        zs = np.clip(zs - step, z[0], z[-1])
    W = np.zeros_like(zeta)
    W[zeta < 1.0] = dspl(zs)
    if np.any(W[zeta < 1.0] <= 0):
        raise DataError("u_z is not positive at a requested zeta level")
    return W


def z_of_zeta(W, zeta):
    """Heights z(zeta_j), j < M, for one column with W(1) = 0 and W > 0 below.

    With w1 = -W_zeta(1), 1/W - 1/(w1 (1-zeta)) is regular; it is integrated by
    the trapezoid rule and -ln(1-zeta)/w1 is added exactly.
    """
    W = np.asarray(W, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    inner = W[:-1]
    if np.any(inner <= 0):
        j = int(np.flatnonzero(inner <= 0)[0])
        raise DataError(f"W <= 0 at interior node {j}; cannot invert")
    w1 = float(ratio_to_linear(W, zeta)[-1])
    if not w1 > 0:
        raise DataError("W does not vanish linearly at zeta = 1; cannot invert")
    zi = zeta[:-1]
    reg = 1.0 / inner - 1.0 / (w1 * (1 - zi))
    zreg = cumulative_trapezoid(reg, zi, initial=0.0)
    return zreg - np.log1p(-zi) / w1, w1


def zeta_at_heights(W, zeta, z_out):
    """zeta(z) at requested heights for one column (monotone Hermite in ln(1-zeta))."""
    zc, w1 = z_of_zeta(W, zeta)
    zi = zeta[:-1]
    L = np.log1p(-zi)
    dL = -W[:-1] / (1 - zi)
    spl = CubicHermiteSpline(zc, L, dL)
    z_out = np.asarray(z_out, dtype=float)
    out = np.empty_like(z_out)
    lo = z_out <= zc[-1]
    out[lo] = spl(np.maximum(z_out[lo], 0.0))
    # beyond the last node: exponential approach at the rate of the last node
    out[~lo] = L[-1] + dL[-1] * (z_out[~lo] - zc[-1])
    return -np.expm1(out)


def crocco_inverse(W, zeta, U, z_out, k=None, xi=None, eta=None):
    """Physical (u, v, w) on ``z_out`` from a W field.

    ``W`` is one column (nz,) or a slice (nx, ny, nz); U (and k) broadcast
    over the horizontal axes.  w needs the horizontal grid (xi, eta) and is
    returned as zeros for a single column.
    """
    W = np.asarray(W, dtype=float)
    z_out = np.asarray(z_out, dtype=float)
    U = np.asarray(U, dtype=float)
    if W.ndim == 1:
        u = zeta_at_heights(W, zeta, z_out) * float(U)
        kk = 0.0 if k is None else float(np.asarray(k))
        return u, kk * u, np.zeros_like(u)
    nx, ny, _ = W.shape
    Ub = np.broadcast_to(U, (nx, ny))
    kk = np.zeros((nx, ny)) if k is None else np.broadcast_to(np.asarray(k, dtype=float), (nx, ny))
    u = np.full((nx, ny, z_out.size), np.nan)
    for i in range(nx):
        for j in range(ny):
            if np.all(np.isfinite(W[i, j])):
                u[i, j] = zeta_at_heights(W[i, j], zeta, z_out) * Ub[i, j]
    v = kk[..., None] * u
    if xi is None or eta is None:
        raise DataError("horizontal grid needed to reconstruct the vertical velocity")
    ux = np.gradient(u, xi, axis=0, edge_order=2)
    vy = np.gradient(v, eta, axis=1, edge_order=2)
    w = -cumulative_trapezoid(ux + vy, z_out, axis=-1, initial=0.0)
    return u, v, w


def round_trip_error(u_of_z, n_zeta, U=1.0, z_max=14.0, samples_per_node=4):
    """Max relative error of crocco_inverse(crocco_forward(u)) against u.

    ``n_zeta`` counts zeta nodes; the profile is sampled on ``samples_per_node
    * n_zeta`` uniform heights in [0, z_max], which are also the output heights.
    """
    zeta = np.linspace(0.0, 1.0, n_zeta)
    z = np.linspace(0.0, z_max, samples_per_node * n_zeta)
    u = U * np.asarray(u_of_z(z), dtype=float)
    W = crocco_forward(VelocityProfile(z, u, U), zeta)
    ur, _, _ = crocco_inverse(W, zeta, U, z)
    return float(np.max(np.abs(ur - u)) / U)
