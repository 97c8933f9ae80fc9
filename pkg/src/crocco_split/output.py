"""CSV and JSON writers and readers for histories and reports."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .crocco import crocco_inverse
from .errors import CroccoSplitError, DataError

SLICE_HEADER = "t,xi,eta,zeta,W"
_FMT = "%.16e"


class OutputError(CroccoSplitError):
    exit_code = 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps_report(report):
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def slice_rows(t, W, grid):
    """(n, 5) array of t, xi, eta, zeta, W over the active nodes of one slice."""
    ia, ja = np.nonzero(grid.active)
    nz = grid.zeta.size
    I = np.repeat(ia, nz)
    J = np.repeat(ja, nz)
    K = np.tile(np.arange(nz), ia.size)
    return np.column_stack([np.full(I.size, t), grid.xi[I], grid.eta[J], grid.zeta[K], W[I, J, K]])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        if len(rows):
            np.savetxt(fh, rows, fmt=_FMT, delimiter=",")


def write_slices(path, hist, stride=1):
    rows = [slice_rows(hist.times[i], hist.slices[i], hist.grid) for i in hist.thinned(stride)]
    _write_csv(path, SLICE_HEADER, np.concatenate(rows) if rows else np.empty((0, 5)))


def read_slices(path, grid):
    """Inverse of :func:`write_slices` on a known grid.  Returns (times, slices)."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read slices from {path}: {exc}") from exc
    times = np.unique(data[:, 0])
    out = []
    for t in times:
        rows = data[data[:, 0] == t]
        W = np.full(grid.shape, np.nan)
        i = np.rint((rows[:, 1] - grid.xi[0]) / grid.hx).astype(int)
        j = np.rint((rows[:, 2] - grid.eta[0]) / grid.hy).astype(int)
        k = np.rint(rows[:, 3] / grid.hz).astype(int)
        W[i, j, k] = rows[:, 4]
        out.append(W)
    return [float(t) for t in times], out


def _probe_index(grid, x, y):
    X, Y = grid.mesh2d()
    d = np.where(grid.active, (X - x) ** 2 + (Y - y) ** 2, np.inf)
    return np.unravel_index(int(np.argmin(d)), d.shape)


def _barrier_source(report):
    checks = report.get("checks", {})
    for name in ("comparison_barriers", "growth_envelope"):
        if name in checks:
            return checks[name]
    return None


def write_probes(path, hist, report, probes):
    from .porous import BarrierConstants

    src = _barrier_source(report)
    t = hist.times[-1]
    z = hist.grid.zeta
    if src is not None:
        c = src["constants"]
        consts = BarrierConstants(c["theta0"], c["C1"], c["M1"], c["beta"], c["beta_default"])
        te = src["exponent_time_scale"] * t
        lo, up = consts.lower(te, z), consts.upper(te, z)
    else:
        lo = up = np.full(z.shape, np.nan)
    rows = []
    for n, (x, y) in enumerate(probes):
        i, j = _probe_index(hist.grid, float(x), float(y))
        W = hist.final[i, j]
        rows.append(np.column_stack([
            np.full(z.size, n), np.full(z.size, hist.grid.xi[i]), np.full(z.size, hist.grid.eta[j]),
            np.full(z.size, t), z, W, lo, up,
        ]))
    data = np.concatenate(rows) if rows else np.empty((0, 8))
    with open(path, "w", newline="") as fh:
        fh.write("probe,xi,eta,t,zeta,W,lower_barrier,upper_barrier\n")
        for r in data:
            fh.write(f"{int(r[0])}," + ",".join(_FMT % v for v in r[1:]) + "\n")


def write_physical(path, hist, scenario, nz=65, zmax=8.0):
    g = hist.grid
    t = hist.times[-1]
    X, Y = g.mesh2d()
    U = np.broadcast_to(scenario.trace.U(t, X, Y), X.shape)
    k = np.broadcast_to(scenario.kfield.k(X, Y), X.shape)
    z = np.linspace(0.0, zmax, nz)
    u, v, w = crocco_inverse(hist.final, g.zeta, U, z, k=k, xi=g.xi, eta=g.eta)
    ia, ja = np.nonzero(g.active)
    I = np.repeat(ia, nz)
    J = np.repeat(ja, nz)
    K = np.tile(np.arange(nz), ia.size)
    rows = np.column_stack([g.xi[I], g.eta[J], z[K], u[I, J, K], v[I, J, K], w[I, J, K]])
    _write_csv(path, "xi,eta,z,u,v,w", rows)


def write_outputs(hist, report, out_dir, timings=None, scenario=None, options=None):
    """Write slices.csv, report.json, probes.csv, timings.json and (optionally) physical.csv."""
    if not hist.slices:
        raise DataError("history is empty")
    opts = dict(options or {})
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        stride = report.get("config", {}).get("verification", {}).get("history_stride", 1)
        write_slices(out / "slices.csv", hist, stride)
        (out / "report.json").write_text(dumps_report(report))
        write_probes(out / "probes.csv", hist, report, opts.get("probes", [[0.5, 0.5]]))
        if timings is not None:
            (out / "timings.json").write_text(dumps_report(timings))
        if opts.get("physical") and scenario is not None:
            write_physical(out / "physical.csv", hist, scenario, opts.get("physical_nz", 65), opts.get("physical_zmax", 8.0))
    except OSError as exc:
        raise OutputError(f"cannot write outputs to {out}: {exc}") from exc
    return out
