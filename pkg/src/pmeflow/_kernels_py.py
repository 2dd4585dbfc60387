"""Pure NumPy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation (same arithmetic
order), so both backends return bit-identical results.
"""
import numpy as np

BACKEND = "python"


def _neighbour_sum(p, periodic):
    out = np.zeros_like(p)
    for axis in range(p.ndim):
        if periodic:
            out += np.roll(p, 1, axis=axis)
            out += np.roll(p, -1, axis=axis)
        else:
            lo = [slice(None)] * p.ndim
            hi = [slice(None)] * p.ndim
            lo[axis] = slice(1, None)
            hi[axis] = slice(None, -1)
            # out[i] += p[i-1] then out[i] += p[i+1], matching the compiled loop
            tmp = np.zeros_like(p)
            tmp[tuple(lo)] = p[tuple(hi)]
            out += tmp
            tmp = np.zeros_like(p)
            tmp[tuple(hi)] = p[tuple(lo)]
            out += tmp
    return out


def _colour_masks(shape):
    idx = np.indices(shape).sum(axis=0)
    return (idx % 2 == 0), (idx % 2 == 1)


def psor_sweep(p, source, active, omega, periodic):
    """One red-black projected SOR sweep for ``-lap(p) = f`` with ``p >= 0``.

    ``source`` holds ``h**2 * f``. Cells outside ``active`` are pinned to zero.
    Updates ``p`` in place and returns the largest absolute change.
    """
    ndim = p.ndim
    denom = 2.0 * ndim
    act = active.astype(bool)
    red, black = _colour_masks(p.shape)
    change = 0.0
    for colour in (red, black):
        nb = _neighbour_sum(p, periodic)
        gs = (nb + source) / denom
        new = p + omega * (gs - p)
        new = np.maximum(new, 0.0)
        sel = colour & act
        if sel.any():
            change = max(change, float(np.max(np.abs(new[sel] - p[sel]))))
        p[sel] = new[sel]
    p[~act] = 0.0
    return change


def _cell_coords(points, lower, h, n, periodic):
    s = (points - lower) / h - 0.5
    i = np.floor(s).astype(np.int64)
    if periodic:
        frac = s - i
        i0 = np.mod(i, n)
        i1 = np.mod(i + 1, n)
    else:
        i0 = np.clip(i, 0, n - 2)
        frac = s - i0
        i1 = i0 + 1
    return i0, i1, frac


def interp_linear(values, lower, h, periodic, points):
    """Multilinear interpolation of cell-centred ``values`` at ``points``.

    ``points`` has shape (M, d). Outside the node hull the edge pair is
    extrapolated linearly (truncated mode only).
    """
    d = values.ndim
    if d == 1:
        i0, i1, t = _cell_coords(points[:, 0], lower[0], h, values.shape[0], periodic)
        return values[i0] * (1.0 - t) + values[i1] * t
    i0, i1, tx = _cell_coords(points[:, 0], lower[0], h, values.shape[0], periodic)
    j0, j1, ty = _cell_coords(points[:, 1], lower[1], h, values.shape[1], periodic)
    a = values[i0, j0] * (1.0 - ty) + values[i0, j1] * ty
    b = values[i1, j0] * (1.0 - ty) + values[i1, j1] * ty
    return a * (1.0 - tx) + b * tx


def _deposit_weights(s, n, periodic):
    i = np.floor(s).astype(np.int64)
    t = s - i
    if periodic:
        return np.mod(i, n), np.mod(i + 1, n), 1.0 - t, t
    # mass falling outside the node hull stays in the edge cell
    w1 = np.where(i < 0, 0.0, np.where(i >= n - 1, 1.0, t))
    i0 = np.clip(i, 0, n - 2)
    return i0, i0 + 1, 1.0 - w1, w1


def cic_deposit(shape, lower, h, periodic, points, weights):
    """Cloud-in-cell deposition; returns the per-cell deposited mass."""
    d = len(shape)
    if d == 1:
        n = shape[0]
        i0, i1, w0, w1 = _deposit_weights((points[:, 0] - lower[0]) / h - 0.5, n, periodic)
        idx = np.stack([i0, i1], axis=1).ravel()
        wts = np.stack([weights * w0, weights * w1], axis=1).ravel()
        return np.bincount(idx, weights=wts, minlength=n).astype(np.float64)
    nx, ny = shape
    i0, i1, wx0, wx1 = _deposit_weights((points[:, 0] - lower[0]) / h - 0.5, nx, periodic)
    j0, j1, wy0, wy1 = _deposit_weights((points[:, 1] - lower[1]) / h - 0.5, ny, periodic)
    idx = np.stack([i0 * ny + j0, i0 * ny + j1, i1 * ny + j0, i1 * ny + j1], axis=1).ravel()
    wts = np.stack(
        [weights * wx0 * wy0, weights * wx0 * wy1, weights * wx1 * wy0, weights * wx1 * wy1],
        axis=1,
    ).ravel()
    return np.bincount(idx, weights=wts, minlength=nx * ny).reshape(shape).astype(np.float64)
