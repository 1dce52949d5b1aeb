# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernels. Same contract as ``_kernels_py``."""

from libc.stdlib cimport malloc, free


cdef inline void _interp(const double[::1] times, const double[:, ::1] values,
                         Py_ssize_t start, Py_ssize_t count, Py_ssize_t cap,
                         double tq, const double* pre, double* out) noexcept nogil:
    cdef Py_ssize_t nv = values.shape[1]
    cdef Py_ssize_t j, lo, hi, mid, i0, i1, last
    cdef double t0, frac
    if count == 0 or tq < times[start]:
        for j in range(nv):
            out[j] = pre[j]
        return
    last = (start + count - 1) % cap
    if tq >= times[last]:
        for j in range(nv):
            out[j] = values[last, j]
        return
    lo = 0
    hi = count - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if times[(start + mid) % cap] <= tq:
            lo = mid
        else:
            hi = mid
    i0 = (start + lo) % cap
    t0 = times[i0]
    if t0 == tq:
        for j in range(nv):
            out[j] = values[i0, j]
        return
    i1 = (start + hi) % cap
    frac = (tq - t0) / (times[i1] - t0)
    for j in range(nv):
        out[j] = values[i0, j] + frac * (values[i1, j] - values[i0, j])


def interp_ring(const double[::1] times, const double[:, ::1] values,
                Py_ssize_t start, Py_ssize_t count, Py_ssize_t cap,
                double tq, const double[::1] pre, double[::1] out):
    _interp(times, values, start, count, cap, tq, &pre[0], &out[0])


cdef inline void _deriv(const double[:, ::1] a, const double[::1] b,
                        const double[:, ::1] a_tau, bint delayed,
                        const double* x, const double* d, double u,
                        double* k, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = b[i] * u
        for j in range(n):
            s += a[i, j] * x[j]
        if delayed:
            for j in range(n):
                s += a_tau[i, j] * d[j]
        k[i] = s


def rk4_step(const double[:, ::1] a, const double[::1] b, const double[:, ::1] a_tau,
             const double[::1] x, double u, double h, double t0, double tau,
             const double[::1] times, const double[:, ::1] values,
             Py_ssize_t start, Py_ssize_t count, Py_ssize_t cap,
             const double[::1] pre, double[::1] out):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef bint delayed = a_tau.shape[0] > 0
    cdef double* buf = <double*> malloc(8 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* k1 = buf
    cdef double* k2 = buf + n
    cdef double* k3 = buf + 2 * n
    cdef double* k4 = buf + 3 * n
    cdef double* xs = buf + 4 * n
    cdef double* d1 = buf + 5 * n
    cdef double* d2 = buf + 6 * n
    cdef double* d4 = buf + 7 * n
    with nogil:
        if delayed:
            _interp(times, values, start, count, cap, t0 - tau, &pre[0], d1)
            _interp(times, values, start, count, cap, t0 + 0.5 * h - tau, &pre[0], d2)
            _interp(times, values, start, count, cap, t0 + h - tau, &pre[0], d4)
        _deriv(a, b, a_tau, delayed, &x[0], d1, u, k1, n)
        for i in range(n):
            xs[i] = x[i] + 0.5 * h * k1[i]
        _deriv(a, b, a_tau, delayed, xs, d2, u, k2, n)
        for i in range(n):
            xs[i] = x[i] + 0.5 * h * k2[i]
        _deriv(a, b, a_tau, delayed, xs, d2, u, k3, n)
        for i in range(n):
            xs[i] = x[i] + h * k3[i]
        _deriv(a, b, a_tau, delayed, xs, d4, u, k4, n)
        for i in range(n):
            out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    free(buf)
