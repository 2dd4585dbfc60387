"""Uniform-grid field calculus.

Fields live at cell centres ``x_j = a + (j + 1/2) h`` of a uniform Cartesian
grid in one or two dimensions. Truncated grids treat everything outside the
box as zero and use one-sided second-order stencils on the boundary rows;
periodic grids wrap.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

TRUNCATED = "truncated"
PERIODIC = "periodic"


class ExtrapolationError(ValueError):
    """Query point lies outside a truncated grid."""


class SupportBufferWarning(UserWarning):
    """Nonzero field values have come within the buffer of the box edge."""


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    cells: tuple
    boundary: str = TRUNCATED
    buffer_cells: int = 4

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)
        if not (len(lower) == len(upper) == len(cells)) or len(cells) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2 with matching extents")
        if self.boundary not in (TRUNCATED, PERIODIC):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if min(cells) < 8:
            raise ValueError("need at least 8 cells per axis")
        hs = [(b - a) / n for a, b, n in zip(lower, upper, cells)]
        if min(hs) <= 0:
            raise ValueError("grid spacing must be positive")
        if max(hs) - min(hs) > 1e-12 * max(hs):
            raise ValueError("spacing must be equal on every axis")

    @classmethod
    def uniform(cls, dim, lo, hi, n, boundary=TRUNCATED):
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim, boundary)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / self.cells[0]

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def width(self) -> float:
        return min(b - a for a, b in zip(self.lower, self.upper))

    def axes(self):
        return [a + (np.arange(n) + 0.5) * self.h for a, n in zip(self.lower, self.cells)]

    def coords(self):
        """Cell-centre coordinates, one array of ``shape`` per axis."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def radius2(self, centre=None):
        centre = np.zeros(self.dim) if centre is None else np.asarray(centre, float)
        return sum((x - c) ** 2 for x, c in zip(self.coords(), centre))

    def points(self):
        """Cell centres as an (N, d) array in C order."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def refined(self, factor=2):
        return GridSpec(self.lower, self.upper, tuple(n * factor for n in self.cells),
                        self.boundary, self.buffer_cells)

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "cells": list(self.cells),
                "boundary": self.boundary, "buffer_cells": self.buffer_cells}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["cells"]),
                   d.get("boundary", TRUNCATED), d.get("buffer_cells", 4))

    def buffer_ok(self, values, tol=0.0) -> bool:
        """True when nonzero entries stay ``buffer_cells`` away from the box edge."""
        if self.periodic:
            return True
        b = self.buffer_cells
        nz = np.abs(values) > tol
        for axis in range(self.dim):
            edge = np.moveaxis(nz, axis, 0)
            if edge[:b].any() or edge[-b:].any():
                return False
        return True

    def check_buffer(self, values, name="field", tol=0.0):
        ok = self.buffer_ok(values, tol)
        if not ok:
            warnings.warn(f"{name} reaches within {self.buffer_cells} cells of the boundary",
                          SupportBufferWarning, stacklevel=2)
        return ok


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    t: float = 0.0
    name: str = ""
    density: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite values in field {self.name!r}")
        if self.density:
            if v.min(initial=0.0) < -1e-12:
                raise ValueError(f"density field {self.name!r} has negative values")
            v = np.maximum(v, 0.0)
        object.__setattr__(self, "values", v)

    def with_values(self, values, **kw):
        return ScalarField(self.grid, values, kw.get("t", self.t), kw.get("name", self.name),
                           kw.get("density", self.density))


@dataclass(frozen=True)
class VectorField:
    grid: GridSpec
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=np.float64)
        if c.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError("vector components must have shape (d, *grid.shape)")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite vector components")
        object.__setattr__(self, "components", c)

    def norm(self):
        return np.sqrt(np.sum(self.components**2, axis=0))

    def __neg__(self):
        return VectorField(self.grid, -self.components)


def _values(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)


def grad_array(v, grid):
    h = grid.h
    if grid.periodic:
        return np.stack([(np.roll(v, -1, a) - np.roll(v, 1, a)) / (2 * h) for a in range(v.ndim)])
    return np.stack([np.gradient(v, h, axis=a, edge_order=2) for a in range(v.ndim)])


def second_diff(v, grid, axis):
    """Second derivative along one axis; one-sided second order on boundary rows."""
    h2 = grid.h**2
    if grid.periodic:
        return (np.roll(v, -1, axis) - 2 * v + np.roll(v, 1, axis)) / h2
    w = np.moveaxis(v, axis, 0)
    out = np.empty_like(w)
    out[1:-1] = (w[2:] - 2 * w[1:-1] + w[:-2]) / h2
    out[0] = (2 * w[0] - 5 * w[1] + 4 * w[2] - w[3]) / h2
    out[-1] = (2 * w[-1] - 5 * w[-2] + 4 * w[-3] - w[-4]) / h2
    return np.moveaxis(out, 0, axis)


def lap_array(v, grid):
    return sum(second_diff(v, grid, a) for a in range(v.ndim))


def hessian_array(v, grid):
    """Discrete Hessian, shape (d, d, *shape)."""
    d = v.ndim
    g = grad_array(v, grid)
    hess = np.empty((d, d) + v.shape)
    for i in range(d):
        hess[i, i] = second_diff(v, grid, i)
        for j in range(i + 1, d):
            hess[i, j] = hess[j, i] = grad_array(g[i], grid)[j]
    return hess


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, grad_array(f.values, f.grid))


def laplacian(f: ScalarField) -> ScalarField:
    return f.with_values(lap_array(f.values, f.grid), density=False)


def interpolate(f, x):
    """Multilinear interpolation of a scalar or vector field.

    ``x`` is one point (length d) or an (M, d) array. Returns a scalar, an
    (M,) array, a (d,) vector or a (d, M) array accordingly.
    """
    grid = f.grid
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != grid.dim:
        raise ValueError("point dimension does not match grid")
    if not grid.periodic:
        lo = np.asarray(grid.lower)
        hi = np.asarray(grid.upper)
        bad = np.any((pts < lo) | (pts > hi), axis=1)
        if bad.any():
            raise ExtrapolationError(f"point {pts[bad][0]} outside truncated grid")
    if isinstance(f, VectorField):
        out = np.stack([kernels.interp_linear(c, grid.lower, grid.h, grid.periodic, pts)
                        for c in f.components])
        return out[:, 0] if single else out
    out = kernels.interp_linear(_values(f), grid.lower, grid.h, grid.periodic, pts)
    return float(out[0]) if single else out


def integrate(f, weight=None, grid=None) -> float:
    """Midpoint-rule integral ``h^d * sum(f * weight)``.

    Summation uses ``math.fsum`` (correctly rounded), so the result does not
    depend on cell order or thread count.
    """
    grid = f.grid if grid is None else grid
    v = _values(f)
    if weight is not None:
        v = v * _values(weight)
    return math.fsum(v.ravel().tolist()) * grid.cell_volume


def integral(values, grid) -> float:
    return math.fsum(np.asarray(values, dtype=np.float64).ravel().tolist()) * grid.cell_volume


def _disk_rows(r_cells):
    """Row half-widths of the discrete disk {|k|^2 + |l|^2 <= r^2}."""
    rows = []
    for k in range(-r_cells, r_cells + 1):
        rows.append((k, int(math.floor(math.sqrt(r_cells * r_cells - k * k) + 1e-12))))
    return rows


def _line_sums(v, w, periodic, axis):
    """Sum of ``v`` over the window [i-w, i+w] along ``axis`` (zero padded unless periodic)."""
    n = v.shape[axis]
    if periodic:
        if 2 * w + 1 >= n:
            return np.repeat(np.sum(v, axis=axis, keepdims=True), n, axis=axis)
        reps = [np.roll(v, s, axis) for s in range(-w, w + 1)]
        return np.sum(reps, axis=0)
    pad = [(0, 0)] * v.ndim
    pad[axis] = (w + 1, w)
    c = np.cumsum(np.pad(v, pad), axis=axis)
    hi = np.take(c, np.arange(2 * w + 1, 2 * w + 1 + n), axis=axis)
    lo = np.take(c, np.arange(0, n), axis=axis)
    return hi - lo


def ball_average(v, grid, r_cells):
    """Average of ``v`` over the discrete ball of radius ``r_cells`` cells around each cell."""
    if r_cells == 0:
        return v.copy()
    if v.ndim == 1:
        return _line_sums(v, r_cells, grid.periodic, 0) / (2 * r_cells + 1)
    total = np.zeros_like(v)
    count = 0
    for k, w in _disk_rows(r_cells):
        shifted = _line_sums(v, w, grid.periodic, 1)
        if grid.periodic:
            shifted = np.roll(shifted, -k, axis=0)
        else:
            out = np.zeros_like(shifted)
            if k >= 0:
                out[: v.shape[0] - k] = shifted[k:]
            else:
                out[-k:] = shifted[: v.shape[0] + k]
            shifted = out
        total += shifted
        count += 2 * w + 1
    return total / count


def dyadic_radii(grid, r_max=None):
    r_max = grid.width / 4 if r_max is None else r_max
    radii = [0]
    r = 1
    while r * grid.h <= r_max * (1 + 1e-12):
        radii.append(r)
        r *= 2
    return radii


def maximal_functions(p: ScalarField, r_max=None):
    """Dyadic maximal functions ``(f, g)`` of a pressure field.

    ``f`` maximises ball averages of ``|grad p|^2 + p |D^2 p|`` and ``g`` those of
    ``|grad p|`` over radii ``{0, h, 2h, 4h, ...} <= r_max`` (default a quarter of
    the box width). Radius 0 is the cell itself, so ``g >= |grad p|`` pointwise.
    """
    grid = p.grid
    v = p.values
    grad = grad_array(v, grid)
    gnorm = np.sqrt(np.sum(grad**2, axis=0))
    hess = hessian_array(v, grid)
    hnorm = np.sqrt(np.sum(hess**2, axis=(0, 1)))
    integrand_f = gnorm**2 + v * hnorm
    f_max = np.zeros_like(v)
    g_max = np.zeros_like(v)
    for r in dyadic_radii(grid, r_max):
        f_max = np.maximum(f_max, ball_average(integrand_f, grid, r))
        g_max = np.maximum(g_max, ball_average(gnorm, grid, r))
    return (ScalarField(grid, f_max, p.t, "maximal_f"), ScalarField(grid, g_max, p.t, "maximal_g"))


# ---------------------------------------------------------------------------
# snapshot files: <stem>.json header + <stem>.bin raw little-endian float64, C order


def save_snapshot(f: ScalarField, stem) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {"name": f.name, "t": f.t, "grid": f.grid.to_dict(), "dtype": "<f8",
              "order": "C", "shape": list(f.grid.shape)}
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    stem.with_suffix(".bin").write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return stem


def load_snapshot(stem) -> ScalarField:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    grid = GridSpec.from_dict(header["grid"])
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=header.get("dtype", "<f8"))
    return ScalarField(grid, raw.reshape(grid.shape).astype(np.float64), header["t"], header["name"])
