# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: PSOR sweeps, multilinear interpolation, CIC deposit.

Arithmetic order matches ``_kernels_py`` exactly; do not build with
-ffast-math or the two backends stop agreeing bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _wrap(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    i = i % n
    if i < 0:
        i += n
    return i


cdef double _psor_1d(double[::1] p, const double[::1] src, const unsigned char[::1] act,
                     double omega, bint periodic) noexcept nogil:
    cdef Py_ssize_t n = p.shape[0], i, colour
    cdef double nb, gs, new, change = 0.0
    for colour in range(2):
        for i in range(colour, n, 2):
            if not act[i]:
                continue
            nb = 0.0
            if i > 0:
                nb += p[i - 1]
            elif periodic:
                nb += p[n - 1]
            if i < n - 1:
                nb += p[i + 1]
            elif periodic:
                nb += p[0]
            gs = (nb + src[i]) / 2.0
            new = p[i] + omega * (gs - p[i])
            if new < 0.0:
                new = 0.0
            if fabs(new - p[i]) > change:
                change = fabs(new - p[i])
            p[i] = new
    for i in range(n):
        if not act[i]:
            p[i] = 0.0
    return change


cdef double _psor_2d(double[:, ::1] p, const double[:, ::1] src, const unsigned char[:, ::1] act,
                     double omega, bint periodic) noexcept nogil:
    cdef Py_ssize_t nx = p.shape[0], ny = p.shape[1], i, j, colour
    cdef double nb, gs, new, change = 0.0
    for colour in range(2):
        for i in range(nx):
            for j in range((i + colour) % 2, ny, 2):
                if not act[i, j]:
                    continue
                nb = 0.0
                if i > 0:
                    nb += p[i - 1, j]
                elif periodic:
                    nb += p[nx - 1, j]
                if i < nx - 1:
                    nb += p[i + 1, j]
                elif periodic:
                    nb += p[0, j]
                if j > 0:
                    nb += p[i, j - 1]
                elif periodic:
                    nb += p[i, ny - 1]
                if j < ny - 1:
                    nb += p[i, j + 1]
                elif periodic:
                    nb += p[i, 0]
                gs = (nb + src[i, j]) / 4.0
                new = p[i, j] + omega * (gs - p[i, j])
                if new < 0.0:
                    new = 0.0
                if fabs(new - p[i, j]) > change:
                    change = fabs(new - p[i, j])
                p[i, j] = new
    for i in range(nx):
        for j in range(ny):
            if not act[i, j]:
                p[i, j] = 0.0
    return change


def psor_sweep(p, source, active, double omega, bint periodic):
    """One red-black projected SOR sweep; see ``_kernels_py.psor_sweep``."""
    act = np.ascontiguousarray(active, dtype=np.uint8)
    src = np.ascontiguousarray(source, dtype=np.float64)
    if p.ndim == 1:
        return _psor_1d(p, src, act, omega, periodic)
    return _psor_2d(p, src, act, omega, periodic)


cdef inline void _coords(double x, double lower, double h, Py_ssize_t n, bint periodic,
                         Py_ssize_t* i0, Py_ssize_t* i1, double* t) noexcept nogil:
    cdef double s = (x - lower) / h - 0.5
    cdef Py_ssize_t i = <Py_ssize_t>floor(s)
    if periodic:
        t[0] = s - i
        i0[0] = _wrap(i, n)
        i1[0] = _wrap(i + 1, n)
    else:
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
        t[0] = s - i
        i0[0] = i
        i1[0] = i + 1


def interp_linear(values, lower, double h, bint periodic, points):
    """Multilinear interpolation; see ``_kernels_py.interp_linear``."""
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = pts.shape[0], k
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] v1
    cdef double[:, ::1] v2
    cdef Py_ssize_t i0, i1, j0, j1
    cdef double tx, ty, a, b
    cdef double lx = lower[0], ly
    if values.ndim == 1:
        v1 = np.ascontiguousarray(values, dtype=np.float64)
        with nogil:
            for k in range(m):
                _coords(pts[k, 0], lx, h, v1.shape[0], periodic, &i0, &i1, &tx)
                o[k] = v1[i0] * (1.0 - tx) + v1[i1] * tx
        return out
    ly = lower[1]
    v2 = np.ascontiguousarray(values, dtype=np.float64)
    with nogil:
        for k in range(m):
            _coords(pts[k, 0], lx, h, v2.shape[0], periodic, &i0, &i1, &tx)
            _coords(pts[k, 1], ly, h, v2.shape[1], periodic, &j0, &j1, &ty)
            a = v2[i0, j0] * (1.0 - ty) + v2[i0, j1] * ty
            b = v2[i1, j0] * (1.0 - ty) + v2[i1, j1] * ty
            o[k] = a * (1.0 - tx) + b * tx
    return out


cdef inline void _dep(double x, double lower, double h, Py_ssize_t n, bint periodic,
                      Py_ssize_t* i0, Py_ssize_t* i1, double* w0, double* w1) noexcept nogil:
    cdef double s = (x - lower) / h - 0.5
    cdef Py_ssize_t i = <Py_ssize_t>floor(s)
    cdef double t = s - i
    if periodic:
        i0[0] = _wrap(i, n)
        i1[0] = _wrap(i + 1, n)
        w0[0] = 1.0 - t
        w1[0] = t
        return
    if i < 0:
        t = 0.0
    elif i >= n - 1:
        t = 1.0
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    i0[0] = i
    i1[0] = i + 1
    w0[0] = 1.0 - t
    w1[0] = t


def cic_deposit(shape, lower, double h, bint periodic, points, weights):
    """Cloud-in-cell deposition; see ``_kernels_py.cic_deposit``."""
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t m = pts.shape[0], k
    cdef Py_ssize_t i0, i1, j0, j1
    cdef double wx0, wx1, wy0, wy1
    cdef double lx = lower[0], ly
    cdef double[::1] o1
    cdef double[:, ::1] o2
    if len(shape) == 1:
        out = np.zeros(shape[0], dtype=np.float64)
        o1 = out
        with nogil:
            for k in range(m):
                _dep(pts[k, 0], lx, h, o1.shape[0], periodic, &i0, &i1, &wx0, &wx1)
                o1[i0] += w[k] * wx0
                o1[i1] += w[k] * wx1
        return out
    ly = lower[1]
    out = np.zeros((shape[0], shape[1]), dtype=np.float64)
    o2 = out
    with nogil:
        for k in range(m):
            _dep(pts[k, 0], lx, h, o2.shape[0], periodic, &i0, &i1, &wx0, &wx1)
            _dep(pts[k, 1], ly, h, o2.shape[1], periodic, &j0, &j1, &wy0, &wy1)
            o2[i0, j0] += w[k] * wx0 * wy0
            o2[i0, j1] += w[k] * wx0 * wy1
            o2[i1, j0] += w[k] * wx1 * wy0
            o2[i1, j1] += w[k] * wx1 * wy1
    return out
