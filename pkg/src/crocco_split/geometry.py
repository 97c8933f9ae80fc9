"""Horizontal domain, tensor grid in (xi, eta, zeta) and inflow/outflow labelling.

The horizontal domain D is a simple counter-clockwise polygon (rectangles are
the common case).  Every edge is straight, so outward normals are constant per
edge and boundary sampling is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, GeometryError

INFLOW = -1
TANGENTIAL = 0
OUTFLOW = 1
INTERIOR = 2

LABEL_NAMES = {INFLOW: "inflow", TANGENTIAL: "tangential", OUTFLOW: "outflow"}


def _segment_distance(px, py, ax, ay, bx, by):
    """Distance from points (px, py) to segments [a, b]; broadcasts."""
    dx = bx - ax
    dy = by - ay
    len2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = ((px - ax) * dx + (py - ay) * dy) / len2
    lam = np.clip(np.nan_to_num(lam), 0.0, 1.0)
    cx = ax + lam * dx
    cy = ay + lam * dy
    return np.hypot(px - cx, py - cy)


@dataclass(frozen=True)
class Domain2D:
    vertices: np.ndarray
    kind: str = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ConfigError("domain needs at least three (x, y) vertices", key="domain")
        if not np.all(np.isfinite(v)):
            raise ConfigError("non-finite vertex", key="domain")
        object.__setattr__(self, "vertices", v)
        area = self.signed_area
        if area <= 0.0:
            if area == 0.0:
                raise ConfigError("degenerate domain with zero area", key="domain")
            raise ConfigError("polygon vertices must be counter-clockwise", key="domain")
        if not self._is_simple():
            raise ConfigError("polygon is not simple (edges cross)", key="domain")

    @classmethod
    def rectangle(cls, x_min, x_max, y_min, y_max):
        if not (x_max > x_min and y_max > y_min):
            raise ConfigError(
                f"degenerate extents [{x_min},{x_max}]x[{y_min},{y_max}]", key="domain"
            )
        v = [(x_min, y_min), (x_max, y_min), (x_max, y_max), (x_min, y_max)]
        return cls(np.array(v, dtype=float), kind="rectangle")

    @classmethod
    def polygon(cls, vertices):
        return cls(np.asarray(vertices, dtype=float), kind="polygon")

    # -- basic geometry -------------------------------------------------
    @property
    def signed_area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def area(self):
        return abs(self.signed_area)

    @property
    def edges(self):
        """(E, 2, 2) array of edge endpoints, in vertex order."""
        v = self.vertices
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)

    @property
    def edge_lengths(self):
        e = self.edges
        return np.hypot(*(e[:, 1] - e[:, 0]).T)

    @property
    def normals(self):
        """Outward unit normals per edge (CCW orientation: rotate tangent clockwise)."""
        e = self.edges
        d = e[:, 1] - e[:, 0]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    @property
    def bounds(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    @property
    def diameter(self):
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def _is_simple(self):
        e = self.edges
        n = len(e)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(e[i, 0], e[i, 1], e[j, 0], e[j, 1]):
                    return False
        return True

    # -- point queries ----------------------------------------------------
    def boundary_distance(self, x, y):
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        e = self.edges
        d = _segment_distance(x, y, e[:, 0, 0], e[:, 0, 1], e[:, 1, 0], e[:, 1, 1])
        return d.min(axis=-1)

    def contains(self, x, y, tol=None):
        """Membership in the closed domain, boundary points within ``tol`` included."""
        if tol is None:
            tol = self.tol_geom
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        e = self.edges
        ax, ay = e[:, 0, 0], e[:, 0, 1]
        bx, by = e[:, 1, 0], e[:, 1, 1]
        xe = x[..., None]
        ye = y[..., None]
        crosses = (ay > ye) != (by > ye)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_int = ax + (ye - ay) * (bx - ax) / (by - ay)
        inside = np.logical_and(crosses, xe < x_int).sum(axis=-1) % 2 == 1
        return inside | (self.boundary_distance(x, y) <= tol)

    @property
    def tol_geom(self):
        return 1e-9 * self.diameter

    # -- boundary sampling ------------------------------------------------
    def boundary_samples(self, spacing=None, per_edge=None):
        """Sample every edge uniformly, endpoints included.

        Returns points (S, 2), edge index (S,), and trapezoid arclength weights
        (S,) that integrate exactly along each straight edge for linear data.
        """
        lengths = self.edge_lengths
        pts, idx, wts = [], [], []
        for i, (a, b) in enumerate(self.edges):
            if per_edge is not None:
                m = int(per_edge)
            else:
                h = spacing if spacing is not None else self.diameter / 64
                m = max(2, int(np.ceil(lengths[i] / h)) + 1)
            s = np.linspace(0.0, 1.0, m)
            pts.append(a[None, :] + s[:, None] * (b - a)[None, :])
            idx.append(np.full(m, i))
            w = np.full(m, lengths[i] / (m - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            wts.append(w)
        return np.concatenate(pts), np.concatenate(idx), np.concatenate(wts)

    # -- backward straight-line exits -------------------------------------
    def backward_exit(self, xi, eta, slope, tol=None):
        """First boundary point met when walking from (xi, eta) towards smaller x
        along the line of the given slope.

        Returns ``(x_exit, y_exit, on_edge)`` with ``on_edge`` a boolean (..., E)
        array marking the edges that contain the exit point (two at corners).
        """
        if tol is None:
            tol = self.tol_geom
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        slope = np.broadcast_to(np.asarray(slope, dtype=float), xi.shape)
        e = self.edges
        ax, ay = e[:, 0, 0], e[:, 0, 1]
        bx, by = e[:, 1, 0], e[:, 1, 1]
        X = xi[..., None]
        Y = eta[..., None]
        S = slope[..., None]
        La = S * (ax - X) - (ay - Y)
        Lb = S * (bx - X) - (by - Y)
        scale = 1.0 + np.abs(S) * self.diameter
        za = np.abs(La) <= tol * scale
        zb = np.abs(Lb) <= tol * scale
        cross = (La * Lb < 0.0) & ~za & ~zb
        with np.errstate(invalid="ignore", divide="ignore"):
            lam = La / (La - Lb)
        xc = np.where(cross, ax + lam * (bx - ax), np.nan)
        # endpoints that lie on the line are candidates too (covers collinear edges)
        cand = np.concatenate(
            [xc, np.where(za, ax + 0 * X, np.nan), np.where(zb, bx + 0 * X, np.nan)], axis=-1
        )
        cand = np.where(cand <= X + tol, cand, np.nan)
        delta = 1e3 * tol + 1e-12
        probe_x = cand - delta
        probe_y = Y + S * (probe_x - X)
        probe_x_safe = np.nan_to_num(probe_x)
        probe_y_safe = np.nan_to_num(probe_y)
        outside = ~self.contains(probe_x_safe, probe_y_safe, tol=tol)
        cand = np.where(outside & np.isfinite(cand), cand, -np.inf)
        x_exit = cand.max(axis=-1)
        if np.any(~np.isfinite(x_exit)):
            raise GeometryError("backward line never leaves the domain (anchor outside D?)")
        x_exit = np.minimum(x_exit, xi)
        y_exit = eta + slope * (x_exit - xi)
        d = _segment_distance(
            x_exit[..., None], y_exit[..., None], ax, ay, bx, by
        )
        on_edge = d <= 1e3 * tol + 1e-12
        return x_exit, y_exit, on_edge


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (o1 == 0 and on_seg(p1, p2, q1))
        or (o2 == 0 and on_seg(p1, p2, q2))
        or (o3 == 0 and on_seg(q1, q2, p1))
        or (o4 == 0 and on_seg(q1, q2, p2))
    )


@dataclass(frozen=True)
class GridSpec:
    """Cell counts (nx, ny, nz), final time and number of splitting intervals."""

    nx: int
    ny: int
    nz: int
    T: float
    n_split: int

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 2:
                raise ConfigError("cell count must be >= 2", key=f"grid.{name}")
        if not self.T > 0:
            raise ConfigError("final time must be positive", key="grid.T")
        if self.n_split < 2 or self.n_split % 2:
            raise ConfigError(
                "n_split must be even so the run ends after a complete "
                "porous/transport pair",
                key="grid.n_split",
            )

    @property
    def dt(self):
        return self.T / self.n_split

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n_split + 1)


@dataclass(frozen=True)
class BoundaryClassification:
    points: np.ndarray
    edge: np.ndarray
    normals: np.ndarray
    k_n: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    tol_tangent: float

    def mask(self, label):
        return self.labels == label

    def counts(self):
        return {LABEL_NAMES[k]: int(np.sum(self.labels == k)) for k in LABEL_NAMES}


def _label(k_n, tol_tangent):
    labels = np.full(k_n.shape, TANGENTIAL, dtype=int)
    labels[k_n < -tol_tangent] = INFLOW
    labels[k_n > tol_tangent] = OUTFLOW
    return labels


def classify_boundary(domain, k, tol_tangent=1e-10, spacing=None, per_edge=None):
    """Label boundary samples inflow / outflow / tangential by the sign of (1, k).n.

    ``k`` is a callable ``k(x, y)`` or an array of values at the samples that
    ``domain.boundary_samples(spacing, per_edge)`` produces.
    """
    pts, edge, wts = domain.boundary_samples(spacing=spacing, per_edge=per_edge)
    if callable(k):
        kv = np.asarray(k(pts[:, 0], pts[:, 1]), dtype=float)
        kv = np.broadcast_to(kv, (len(pts),)).copy()
    else:
        kv = np.asarray(k, dtype=float)
        if kv.shape != (len(pts),):
            raise DataError(f"k has {kv.size} values for {len(pts)} boundary samples")
    if not np.all(np.isfinite(kv)):
        bad = int(np.flatnonzero(~np.isfinite(kv))[0])
        raise DataError(f"non-finite k at boundary sample {bad} {tuple(pts[bad])}")
    normals = domain.normals[edge]
    k_n = normals[:, 0] + kv * normals[:, 1]
    return BoundaryClassification(
        points=pts,
        edge=edge,
        normals=normals,
        k_n=k_n,
        labels=_label(k_n, tol_tangent),
        weights=wts,
        tol_tangent=tol_tangent,
    )


@dataclass(frozen=True)
class Grid:
    domain: Domain2D
    spec: GridSpec
    xi: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    active: np.ndarray
    node_labels: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return (len(self.xi), len(self.eta), len(self.zeta))

    @property
    def hx(self):
        return self.xi[1] - self.xi[0]

    @property
    def hy(self):
        return self.eta[1] - self.eta[0]

    @property
    def hz(self):
        return self.zeta[1] - self.zeta[0]

    def mesh2d(self):
        return np.meshgrid(self.xi, self.eta, indexing="ij")

    def mesh3d(self):
        return np.meshgrid(self.xi, self.eta, self.zeta, indexing="ij")

    def horizontal_weights(self):
        """Trapezoid weights on the (xi, eta) node array, masked to active nodes."""
        wx = _trap_weights(self.xi)
        wy = _trap_weights(self.eta)
        return np.outer(wx, wy) * self.active

    def zeta_weights(self):
        return _trap_weights(self.zeta)


def _trap_weights(x):
    w = np.zeros_like(x)
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def build_grid(domain, spec, k=None, tol_tangent=1e-10):
    """Uniform tensor nodes over the bounding box of ``domain``.

    Nodes outside the closed polygon are inactive.  With a direction field
    ``k(x, y)`` the boundary nodes carry their inflow/outflow label.
    """
    x0, x1, y0, y1 = domain.bounds
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("degenerate domain extents", key="domain")
    xi = np.linspace(x0, x1, spec.nx + 1)
    eta = np.linspace(y0, y1, spec.ny + 1)
    zeta = np.linspace(0.0, 1.0, spec.nz + 1)
    zeta[-1] = 1.0
    X, Y = np.meshgrid(xi, eta, indexing="ij")
    active = domain.contains(X, Y)
    labels = np.full(X.shape, INTERIOR, dtype=int)
    on_bnd = active & (domain.boundary_distance(X, Y) <= domain.tol_geom)
    if k is not None and np.any(on_bnd):
        labels[on_bnd] = _node_labels(domain, X[on_bnd], Y[on_bnd], k, tol_tangent)
    return Grid(domain, spec, xi, eta, zeta, active, labels)


def _node_labels(domain, x, y, k, tol_tangent):
    """Label boundary nodes; at corners the most inflow-like edge wins (closure of inflow)."""
    e = domain.edges
    d = _segment_distance(
        x[:, None], y[:, None], e[:, 0, 0], e[:, 0, 1], e[:, 1, 0], e[:, 1, 1]
    )
    on_edge = d <= domain.tol_geom
    kv = np.broadcast_to(np.asarray(k(x, y), dtype=float), x.shape)
    n = domain.normals
    k_n = n[None, :, 0] + kv[:, None] * n[None, :, 1]
    k_n = np.where(on_edge, k_n, np.inf)
    return _label(k_n.min(axis=1), tol_tangent)
