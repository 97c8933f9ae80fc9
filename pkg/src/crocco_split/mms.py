"""Order studies against closed-form solutions."""
from __future__ import annotations

import numpy as np

from .driver import RunConfig, refine_study, run
from .errors import ConfigError
from .porous import PorousParams, porous_advance


def _orders(errs):
    e = np.asarray(errs, dtype=float)
    return [float(v) for v in np.log2(e[:-1] / e[1:])]


def porous_decay_study(steps=(8, 16, 32), theta=1.0, beta=1.0, T=3.0, c=1.0, nz=32, epsilon=1e-12):
    """Temporal order of the column solver on W = c e^{-beta t} (1 - zeta).

    The data are A = 0, b = beta and g(t) = -c^2 e^{-2 beta t}; the profile is
    linear in zeta so the spatial discretization is exact and the error is
    purely temporal.
    """
    if len(steps) < 3:
        raise ConfigError("need at least three step levels")
    z = np.linspace(0.0, 1.0, nz + 1)

    def coeffs(t, cols):
        n = len(cols)
        return np.zeros((n, z.size)), np.full((n, z.size), beta), np.full(n, -c * c * np.exp(-2 * beta * t))

    exact = c * np.exp(-beta * T) * (1 - z)
    errs = []
    for n in steps:
        W, _ = porous_advance(
            (c * (1 - z))[None], z, coeffs, 0.0, T,
            PorousParams(epsilon=epsilon, inner_steps=n, theta=theta), 1.0,
        )
        errs.append(float(np.max(np.abs(W[0] - exact))))
    return {"steps": list(steps), "theta": theta, "beta": beta, "T": T, "errors": errs, "orders": _orders(errs)}


def transport_shift_study(cells=(8, 16, 32), nz=8, T=2.0, n_split=6, workers=1):
    """Spatial order of the transport sub-step on the shifted-profile preset."""

    def make(n):
        return RunConfig.for_preset("transport-only", nx=n, ny=n, nz=nz, T=T, n_split=n_split, workers=workers)

    sc = make(cells[0]).scenario
    res = refine_study(make, list(cells), exact=sc.data.W1)
    h = [1.0 / n for n in cells]
    C = [e / hh**2 for e, hh in zip(res["errors"], h)]
    return {"cells": list(cells), "errors": res["errors"], "orders": res["orders"], "error_over_h2": C}
