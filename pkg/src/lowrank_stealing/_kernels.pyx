# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled barrier kernel; same contract as ``_kernels_py.barrier_eval``.

Logarithms go through numpy's vectorized ``log`` (much faster than scalar
libm calls); everything else is fused into single passes without
temporaries. The truncated-KL sum is two vectorized logs and a dot product,
which numpy already does at memory speed, so it has no compiled version.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()


def barrier_eval(alpha, R, floor, logz, double bound, double t, bint derivs=True):
    cdef const double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:, ::1] RR = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[::1] fl = np.ascontiguousarray(floor, dtype=np.float64)
    cdef const double[::1] lz = np.ascontiguousarray(logz, dtype=np.float64)
    cdef Py_ssize_t m = RR.shape[0], n = RR.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double gi, acc, obj = 0.0, bar = 0.0
    for j in range(m):
        if bound - a[j] <= 0.0 or bound + a[j] <= 0.0:
            return INFINITY, INFINITY, None, None
        bar -= log(bound - a[j]) + log(bound + a[j])
    x_np = np.zeros(n)
    gap_np = np.empty(n)
    cdef double[::1] x = x_np
    cdef double[::1] gap = gap_np
    for j in range(m):
        for i in range(n):
            x[i] += a[j] * RR[j, i]
    for i in range(n):
        gap[i] = x[i] - fl[i]
        if gap[i] <= 0.0:
            return INFINITY, INFINITY, None, None
    cdef const double[::1] logx = np.log(x_np)
    cdef const double[::1] loggap = np.log(gap_np)
    for i in range(n):
        obj += x[i] * (logx[i] - lz[i])
        bar -= loggap[i]
    value = t * obj + bar
    if not derivs:
        return value, obj, None, None
    grad_np = np.zeros(m)
    hess_np = np.zeros((m, m))
    g1_np = np.empty(n)
    d_np = np.empty(n)
    cdef double[::1] grad = grad_np
    cdef double[:, ::1] hess = hess_np
    cdef double[::1] g1 = g1_np
    cdef double[::1] dd = d_np
    for i in range(n):
        gi = 1.0 / gap[i]
        g1[i] = t * (logx[i] + 1.0 - lz[i]) - gi
        dd[i] = t / x[i] + gi * gi
    # row-wise dot products over contiguous memory
    for j in range(m):
        acc = 0.0
        for i in range(n):
            acc += RR[j, i] * g1[i]
        grad[j] = acc
        for l in range(j + 1):
            acc = 0.0
            for i in range(n):
                acc += RR[j, i] * dd[i] * RR[l, i]
            hess[j, l] = acc
    for j in range(m):
        grad[j] += 1.0 / (bound - a[j]) - 1.0 / (bound + a[j])
        hess[j, j] += 1.0 / ((bound - a[j]) * (bound - a[j])) + 1.0 / ((bound + a[j]) * (bound + a[j]))
        for l in range(j):
            hess[l, j] = hess[j, l]
    return value, obj, grad_np, hess_np
