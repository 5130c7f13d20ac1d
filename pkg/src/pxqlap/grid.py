"""Uniform tensor grids on intervals, rectangles and disks.

Distances to the boundary are analytic. Quadrature against the power weight
``d(x)**a`` (a > -1) is exact in the boundary-normal direction on the cells
touching the boundary, so singular loads converge under refinement.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    kind: str
    bounds: tuple

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        object.__setattr__(self, "bounds", b)
        if not all(math.isfinite(v) for v in b):
            raise DomainError(f"non-finite extents {b}")
        if self.kind == "interval":
            if len(b) != 2 or not b[1] > b[0]:
                raise DomainError(f"degenerate interval {b}")
        elif self.kind == "rectangle":
            if len(b) != 4 or not (b[1] > b[0] and b[3] > b[2]):
                raise DomainError(f"degenerate rectangle {b}; expected (x0, x1, y0, y1)")
        elif self.kind == "disk":
            if len(b) != 3 or not b[2] > 0:
                raise DomainError(f"degenerate disk {b}; expected (cx, cy, radius)")
        else:
            raise DomainError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def interval(cls, a=0.0, b=1.0):
        return cls("interval", (a, b))

    @classmethod
    def rectangle(cls, x0, x1, y0, y1):
        return cls("rectangle", (x0, x1, y0, y1))

    @classmethod
    def disk(cls, cx, cy, r):
        return cls("disk", (cx, cy, r))

    @property
    def dim(self):
        return 1 if self.kind == "interval" else 2

    @property
    def diam(self):
        b = self.bounds
        if self.kind == "interval":
            return b[1] - b[0]
        if self.kind == "rectangle":
            return math.hypot(b[1] - b[0], b[3] - b[2])
        return 2.0 * b[2]

    def distance(self, x, y=None):
        """Distance to the boundary for points inside, 0 outside."""
        b = self.bounds
        x = np.asarray(x, dtype=float)
        if self.kind == "interval":
            d = np.minimum(x - b[0], b[1] - x)
        elif self.kind == "rectangle":
            y = np.asarray(y, dtype=float)
            d = np.minimum(np.minimum(x - b[0], b[1] - x), np.minimum(y - b[2], b[3] - y))
        else:
            y = np.asarray(y, dtype=float)
            d = b[2] - np.hypot(x - b[0], y - b[1])
        return np.maximum(d, 0.0)

    def to_dict(self):
        return {"kind": self.kind, "bounds": list(self.bounds)}


@dataclass(frozen=True, eq=False)
class Field:
    grid: "Grid"
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.size,):
            raise ValueError(f"field has {v.shape} values, grid has {self.grid.size} nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def to_csv(self, path, name="value"):
        write_csv(path, self.grid, {name: self.values})


def write_csv(path, grid, columns: dict):
    """Nodal CSV: coordinates then one column per field."""
    header = ["x"] if grid.dim == 1 else ["x", "y"]
    header += list(columns)
    cols = [grid.x] if grid.dim == 1 else [grid.x, grid.y]
    cols += [np.asarray(c, dtype=float) for c in columns.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


class Grid:
    """Nodes are stored flat with x varying fastest."""

    def __init__(self, domain: Domain, nx: int, ny: int | None = None, origin=None, spacing=None):
        self.domain = domain
        self.dim = domain.dim
        b = domain.bounds
        if self.dim == 1:
            self.shape = (nx,)
            a0, a1 = b
            self.hx = (a1 - a0) / (nx - 1)
            self.hy = None
            self.x = np.linspace(a0, a1, nx)
            self.y = None
            idx = np.arange(nx)
            # index arithmetic keeps the distance exactly symmetric
            self._dist = np.minimum(idx, nx - 1 - idx) * self.hx
            bmask = np.zeros(nx, dtype=bool)
            bmask[[0, -1]] = True
            inside = np.ones(nx, dtype=bool)
        else:
            ny = nx if ny is None else ny
            self.shape = (nx, ny)
            if domain.kind == "rectangle":
                x0, x1, y0, y1 = b
            else:
                cx, cy, r = b
                x0, x1, y0, y1 = cx - r, cx + r, cy - r, cy + r
            self.hx = (x1 - x0) / (nx - 1)
            self.hy = (y1 - y0) / (ny - 1)
            xs = np.linspace(x0, x1, nx)
            ys = np.linspace(y0, y1, ny)
            X, Y = np.meshgrid(xs, ys)  # rows = y
            self.x = X.ravel()
            self.y = Y.ravel()
            if domain.kind == "rectangle":
                i = np.tile(np.arange(nx), ny)
                j = np.repeat(np.arange(ny), nx)
                self._dist = np.minimum(
                    np.minimum(i, nx - 1 - i) * self.hx, np.minimum(j, ny - 1 - j) * self.hy
                )
                bmask = self._dist == 0
                inside = np.ones(self.x.size, dtype=bool)
            else:
                raw = domain.bounds[2] - np.hypot(self.x - domain.bounds[0], self.y - domain.bounds[1])
                tol = 1e-12 * domain.bounds[2]
                raw = np.where(np.abs(raw) <= tol, 0.0, raw)
                self._dist = np.maximum(raw, 0.0)
                self._sdist = raw
                bmask = raw <= 0
                inside = raw >= 0
        self.h = self.hx if self.dim == 1 else max(self.hx, self.hy)
        self.n = nx
        self.size = self.x.size
        self.boundary_mask = bmask
        self.inside = inside
        self.interior = ~bmask
        for arr in (self.x, self.y, self._dist, bmask, inside, self.interior):
            if arr is not None:
                arr.setflags(write=False)

    # -- basic structure ------------------------------------------------------

    @cached_property
    def dist(self) -> Field:
        return Field(self, self._dist)

    @property
    def nodes(self):
        return self.x if self.dim == 1 else np.column_stack([self.x, self.y])

    def describe_node(self, k):
        if self.dim == 1:
            return f"x={self.x[k]:.6g}"
        return f"x={self.x[k]:.6g}, y={self.y[k]:.6g}"

    def refined(self, factor: int) -> "Grid":
        if self.dim == 1:
            return Grid(self.domain, (self.shape[0] - 1) * factor + 1)
        return Grid(self.domain, (self.shape[0] - 1) * factor + 1, (self.shape[1] - 1) * factor + 1)

    def padded(self, frac: float):
        """Grid on an enlarged domain whose nodes contain this grid's nodes.

        Returns ``(big_grid, index)`` where ``big_grid.values[index]`` restricts
        a big-grid field to this grid.
        """
        b = self.domain.bounds
        pad_len = frac * self.domain.diam
        if self.dim == 1:
            k = max(1, int(round(pad_len / self.hx)))
            big = Grid(Domain.interval(b[0] - k * self.hx, b[1] + k * self.hx), self.shape[0] + 2 * k)
            return big, np.arange(self.size) + k
        nx, ny = self.shape
        if self.domain.kind == "rectangle":
            kx = max(1, int(round(pad_len / self.hx)))
            ky = max(1, int(round(pad_len / self.hy)))
            big = Grid(
                Domain.rectangle(b[0] - kx * self.hx, b[1] + kx * self.hx, b[2] - ky * self.hy, b[3] + ky * self.hy),
                nx + 2 * kx,
                ny + 2 * ky,
            )
        else:
            kx = ky = max(1, int(round(pad_len / self.hx)))
            big = Grid(Domain.disk(b[0], b[1], b[2] + kx * self.hx), nx + 2 * kx)
        i = np.tile(np.arange(nx), ny) + kx
        j = np.repeat(np.arange(ny), nx) + ky
        return big, j * (nx + 2 * kx) + i

    # -- elements ---------------------------------------------------------------

    @cached_property
    def elements(self):
        """Element connectivity: cells (1D) or active P1 triangles (2D)."""
        if self.dim == 1:
            i = np.arange(self.shape[0] - 1)
            return np.column_stack([i, i + 1])
        nx, ny = self.shape
        i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
        k00 = (j * nx + i).ravel()
        k10 = k00 + 1
        k01 = k00 + nx
        k11 = k01 + 1
        tri = np.concatenate([np.column_stack([k00, k10, k11]), np.column_stack([k00, k11, k01])])
        if self.domain.kind == "rectangle":
            return tri
        # a disk triangle is part of the discrete domain if any vertex is strictly inside
        active = (self._dist[tri] > 0).any(axis=1)
        return tri[active]

    @cached_property
    def element_measure(self):
        if self.dim == 1:
            return np.full(self.shape[0] - 1, self.hx)
        return np.full(len(self.elements), 0.5 * self.hx * self.hy)

    @cached_property
    def grad_operator(self):
        """Per-element gradient of the P1 interpolant: shape (ne, dim, nvert)."""
        if self.dim == 1:
            g = np.empty((self.shape[0] - 1, 1, 2))
            g[:, 0, 0] = -1.0 / self.hx
            g[:, 0, 1] = 1.0 / self.hx
            return g
        tri = self.elements
        px = self.x[tri]
        py = self.y[tri]
        # barycentric gradients via the edge-normal formula
        x1, x2, x3 = px.T
        y1, y2, y3 = py.T
        det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
        g = np.empty((len(tri), 2, 3))
        g[:, 0, 0] = (y2 - y3) / det
        g[:, 0, 1] = (y3 - y1) / det
        g[:, 0, 2] = (y1 - y2) / det
        g[:, 1, 0] = (x3 - x2) / det
        g[:, 1, 1] = (x1 - x3) / det
        g[:, 1, 2] = (x2 - x1) / det
        return g

    def element_points(self):
        """Quadrature points of the one-point element rule as (x, y, d)."""
        if self.dim == 1:
            xm = 0.5 * (self.x[:-1] + self.x[1:])
            return xm, None, self.domain.distance(xm)
        tri = self.elements
        cx = self.x[tri].mean(axis=1)
        cy = self.y[tri].mean(axis=1)
        return cx, cy, self.domain.distance(cx, cy)

    def gradients(self, u):
        """Element gradients of nodal values ``u``: shape (ne, dim)."""
        u = np.asarray(u, dtype=float)
        if self.dim == 1:
            return (np.diff(u) / self.hx)[:, None]
        return np.einsum("edk,ek->ed", self.grad_operator, u[self.elements])

    def scatter(self, elem_vals):
        """Sum per-element-per-vertex contributions (ne, nvert) into nodes."""
        return np.bincount(self.elements.ravel(), weights=np.asarray(elem_vals).ravel(), minlength=self.size)

    # -- quadrature -----------------------------------------------------------

    @cached_property
    def hat_mass(self):
        """Integral of each nodal hat function."""
        return self.weights(None)

    def weights(self, exponent=None, region="all", delta=0.0):
        """Nodal weights W_i = integral over region of d^a * phi_i.

        ``exponent`` is None, a scalar, or one value per element (frozen on
        each element). ``region`` is ``"all"``, ``"strip"`` (d < delta) or
        ``"bulk"`` (d >= delta).
        """
        ne = len(self.elements)
        if exponent is None:
            a = np.zeros(ne)
        else:
            a = np.broadcast_to(np.asarray(exponent, dtype=float), (ne,)).astype(float)
        if np.any(a <= -1.0):
            raise ValueError(f"weight exponent {a.min():.6g} <= -1 is not integrable")
        if region not in ("all", "strip", "bulk"):
            raise ValueError(f"unknown region {region!r}")
        lo_cut, hi_cut = 0.0, np.inf
        if region == "strip":
            hi_cut = float(delta)
        elif region == "bulk":
            lo_cut = float(delta)
        if self.dim == 1:
            return self._weights_1d(a, lo_cut, hi_cut)
        return self._weights_2d(a, lo_cut, hi_cut)

    def _weights_1d(self, a, lo_cut, hi_cut):
        n = self.shape[0]
        x0, x1 = self.domain.bounds
        mid = 0.5 * (x0 + x1)
        xl, xr = self.x[:-1], self.x[1:]
        cells = np.arange(n - 1)
        # segments on which d is affine with unit slope; the cell holding the
        # interval midpoint (n even) is split there
        kink = (xl < mid) & (xr > mid)
        seg_cell = np.concatenate([cells, cells[kink]])
        seg_s = np.concatenate([xl, np.full(kink.sum(), mid)])
        seg_e = np.concatenate([np.where(kink, mid, xr), xr[kink]])
        ds = self.domain.distance(seg_s)
        de = self.domain.distance(seg_e)
        ds[seg_s == x0] = 0.0
        de[seg_e == x1] = 0.0
        lo = np.minimum(ds, de)
        hi = np.maximum(ds, de)
        # position (in x) of the lo and hi ends of each segment
        x_lo = np.where(ds <= de, seg_s, seg_e)
        x_hi = np.where(ds <= de, seg_e, seg_s)
        clo = np.maximum(lo, lo_cut)
        chi = np.minimum(hi, hi_cut)
        keep = chi > clo
        span = np.where(hi > lo, hi - lo, 1.0)
        xa = x_lo + (x_hi - x_lo) * (clo - lo) / span
        xb = x_lo + (x_hi - x_lo) * (chi - lo) / span
        cl = xl[seg_cell]
        h = self.hx
        phir_a = (xa - cl) / h
        phir_b = (xb - cl) / h
        m0, mt = _power_moments(clo[keep], chi[keep], a[seg_cell][keep])
        # hat weights: phi is affine in t between the clipped ends
        wr = phir_a[keep] * (m0 - mt) + phir_b[keep] * mt
        wl = m0 - wr
        W = np.zeros(n)
        c = seg_cell[keep]
        np.add.at(W, c, wl)
        np.add.at(W, c + 1, wr)
        return W

    def _weights_2d(self, a, lo_cut, hi_cut):
        tri = self.elements
        # signed distance lets cut triangles drop the part outside the disk
        d = getattr(self, "_sdist", self._dist)[tri].copy()
        lo_cut = max(lo_cut, 0.0)
        # rectangle corner triangles have every vertex on the boundary; the
        # interpolated distance vanishes there, so use the centroid distance
        dead = (d <= 0).all(axis=1)
        if np.any(dead) and self.domain.kind == "rectangle":
            cx = self.x[tri[dead]].mean(axis=1)
            cy = self.y[tri[dead]].mean(axis=1)
            d[dead] = self.domain.distance(cx, cy)[:, None]
        area = self.element_measure
        ds = np.sort(d, axis=1)
        d1, d2, d3 = ds.T
        width = d3 - d1
        flat = width <= 1e-14 * np.maximum(d3, 1e-300)
        outside = np.where(flat, (d3 < lo_cut) | (d3 >= hi_cut), (d3 <= lo_cut) | (d1 >= hi_cut))
        W = np.zeros(self.size)
        # exact mean of the power of the interpolated distance, split equally
        # between the vertices; exact for linear d, so strip + bulk = all
        keep = ~outside
        mass = area[keep] * _triangle_power_mean(d1[keep], d2[keep], d3[keep], a[keep], lo_cut, hi_cut)
        np.add.at(W, tri[keep].ravel(), np.repeat(mass / 3.0, 3))
        return W


def _power_moments(lo, hi, a):
    """Return (int_lo^hi t^a dt, int_lo^hi t^a (t-lo)/(hi-lo) dt), elementwise.

    Closed form where the interval touches or nears t=0 (the singular cells),
    6-point Gauss-Legendre where t^a is smooth across the interval.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    a = np.asarray(a, float)
    w = hi - lo
    m0 = np.empty_like(lo)
    mt = np.empty_like(lo)
    exact = lo <= 4.0 * w
    if np.any(exact):
        l, u, e, ww = lo[exact], hi[exact], a[exact], w[exact]
        i0 = (u ** (e + 1) - l ** (e + 1)) / (e + 1)
        i1 = (u ** (e + 2) - l ** (e + 2)) / (e + 2)
        m0[exact] = i0
        mt[exact] = (i1 - l * i0) / ww
    g = ~exact
    if np.any(g):
        l, e, ww = lo[g], a[g], w[g]
        t = l[:, None] + ww[:, None] * _GAUSS_X[None, :]
        f = t ** e[:, None]
        m0[g] = ww * (f @ _GAUSS_W)
        mt[g] = ww * ((f * _GAUSS_X[None, :]) @ _GAUSS_W)
    return m0, mt


def _moment_linear(lo, hi, a, c0, c1):
    """int_lo^hi t^a (c0 + c1 t) dt for lo < hi (closed form)."""
    i0 = (hi ** (a + 1) - lo ** (a + 1)) / (a + 1)
    i1 = (hi ** (a + 2) - lo ** (a + 2)) / (a + 2)
    return c0 * i0 + c1 * i1


def _triangle_power_mean(d1, d2, d3, a, lo_cut, hi_cut):
    """Mean over a triangle of d^a * 1[lo_cut <= d < hi_cut] for d affine.

    The values of an affine function at a uniform point of a triangle follow
    the triangular distribution with (min, mode, max) = (d1, d2, d3).
    """
    out = np.zeros_like(d1)
    width = d3 - d1
    flat = width <= 1e-14 * np.maximum(d3, 1e-300)
    if np.any(flat):
        dm = d3[flat]
        ok = (dm >= lo_cut) & (dm < hi_cut)
        out[flat] = np.where(ok, np.power(np.maximum(dm, 1e-300), a[flat]), 0.0)
    nf = ~flat
    if np.any(nf):
        p1, p2, p3, e = d1[nf], d2[nf], d3[nf], a[nf]
        W = p3 - p1
        acc = np.zeros_like(p1)
        # rising part on [d1, d2]: pdf = 2 (t - d1) / (W (d2 - d1))
        k = p2 > p1
        lo = np.maximum(p1, lo_cut)
        hi = np.minimum(p2, hi_cut)
        m = k & (hi > lo)
        if np.any(m):
            K = W[m] * (p2[m] - p1[m])
            acc[m] += _moment_linear(lo[m], hi[m], e[m], -2.0 * p1[m] / K, 2.0 / K)
        # falling part on [d2, d3]: pdf = 2 (d3 - t) / (W (d3 - d2))
        k = p3 > p2
        lo = np.maximum(p2, lo_cut)
        hi = np.minimum(p3, hi_cut)
        m = k & (hi > lo)
        if np.any(m):
            K = W[m] * (p3[m] - p2[m])
            acc[m] += _moment_linear(lo[m], hi[m], e[m], 2.0 * p3[m] / K, -2.0 / K)
        out[nf] = acc
    return out


def build_grid(domain: Domain, n: int) -> Grid:
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise DomainError(f"need at least 3 nodes per axis, got {n!r}")
    if domain.kind == "rectangle":
        b = domain.bounds
        log.debug("rectangle corners: boundary is not C^2, constants near corners are unchecked")
    return Grid(domain, int(n))


def boundary_strip(grid: Grid, delta: float) -> np.ndarray:
    """Indices of interior nodes with d < delta."""
    d = grid._dist
    if delta >= d.max():
        log.warning("strip width %.4g >= max distance %.4g: the strip covers the whole interior", delta, d.max())
    return np.flatnonzero(grid.interior & (d < delta))


def integrate(field, weight_exponent=None) -> float:
    """Integral of the P1 interpolant of ``field`` times d(x)**weight_exponent."""
    from .expr import as_expr, eval_on_elements, eval_on_grid

    grid = field.grid
    expo = None
    if weight_exponent is not None:
        e = as_expr(weight_exponent)
        expo = eval_on_elements(e, grid)
        nodal = eval_on_grid(e, grid).values[grid.inside]
        worst = min(expo.min(), nodal.min())
        if worst <= -1.0:
            raise ValueError(f"weight exponent inf {worst:.6g} <= -1: d^a is not integrable")
    W = grid.weights(expo)
    return float(np.dot(np.asarray(field.values), W))
