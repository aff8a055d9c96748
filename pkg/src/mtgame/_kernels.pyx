# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled saddle-point reduction over interpolated successor values."""

import numpy as np

from libc.math cimport INFINITY
from libc.stdint cimport int64_t


def saddle_interp(
    const double[:, :, :, ::1] cost,
    const int64_t[:, :, :, ::1] base,
    const double[:, :, :, :, ::1] theta,
    const double[:, ::1] vnext,
    const int64_t[::1] strides,
    bint upper,
):
    cdef Py_ssize_t B = vnext.shape[0]
    cdef Py_ssize_t S = cost.shape[1]
    cdef Py_ssize_t U = cost.shape[2]
    cdef Py_ssize_t V = cost.shape[3]
    cdef Py_ssize_t n = theta.shape[4]
    cdef bint shared = cost.shape[0] == 1
    if n > 8:
        raise ValueError("state dimension above 8 is not supported")

    value_arr = np.empty((B, S), dtype=np.float64)
    iu_arr = np.empty((B, S), dtype=np.int64)
    iv_arr = np.empty((B, S), dtype=np.int64)
    cdef double[:, ::1] value = value_arr
    cdef int64_t[:, ::1] iu_out = iu_arr
    cdef int64_t[:, ::1] iv_out = iv_arr

    cdef Py_ssize_t ncorner = 1 << n
    cdef int64_t offsets[256]
    cdef Py_ssize_t k, i, b, c, s, a, e
    cdef int64_t off
    for k in range(ncorner):
        off = 0
        for i in range(n):
            if (k >> (n - 1 - i)) & 1:
                off += strides[i]
        offsets[k] = off

    cdef double w, acc, val, inner, outer
    cdef int64_t arg_inner, arg_outer_a, arg_outer_e, idx0
    with nogil:
        for b in range(B):
            c = 0 if shared else b
            for s in range(S):
                outer = INFINITY if upper else -INFINITY
                arg_outer_a = 0
                arg_outer_e = 0
                # outer loop runs over the player who commits first
                for e in range(V if upper else U):
                    inner = -INFINITY if upper else INFINITY
                    arg_inner = 0
                    for a in range(U if upper else V):
                        if upper:
                            idx0 = base[c, s, a, e]
                        else:
                            idx0 = base[c, s, e, a]
                        acc = 0.0
                        for k in range(ncorner):
                            w = 1.0
                            for i in range(n):
                                if upper:
                                    if (k >> (n - 1 - i)) & 1:
                                        w = w * theta[c, s, a, e, i]
                                    else:
                                        w = w * (1.0 - theta[c, s, a, e, i])
                                else:
                                    if (k >> (n - 1 - i)) & 1:
                                        w = w * theta[c, s, e, a, i]
                                    else:
                                        w = w * (1.0 - theta[c, s, e, a, i])
                            acc = acc + w * vnext[b, idx0 + offsets[k]]
                        if upper:
                            val = cost[c, s, a, e] + acc
                            if val > inner:
                                inner = val
                                arg_inner = a
                        else:
                            val = cost[c, s, e, a] + acc
                            if val < inner:
                                inner = val
                                arg_inner = a
                    if upper:
                        if inner < outer:
                            outer = inner
                            arg_outer_a = arg_inner
                            arg_outer_e = e
                    else:
                        if inner > outer:
                            outer = inner
                            arg_outer_a = arg_inner
                            arg_outer_e = e
                value[b, s] = outer
                if upper:
                    iu_out[b, s] = arg_outer_a
                    iv_out[b, s] = arg_outer_e
                else:
                    iu_out[b, s] = arg_outer_e
                    iv_out[b, s] = arg_outer_a
    return value_arr, iu_arr, iv_arr
