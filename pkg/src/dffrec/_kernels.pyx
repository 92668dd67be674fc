# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics and rounding must match _kernels_py."""

from libc.math cimport pow, sqrtf

import numpy as np

cimport numpy as cnp


def scatter_add_rows(cnp.float32_t[:, ::1] out, cnp.int64_t[::1] idx,
                     cnp.float32_t[:, ::1] rows):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t i, j
    cdef cnp.int64_t r
    for i in range(n):
        r = idx[i]
        for j in range(d):
            out[r, j] += rows[i, j]


def adamw_update(cnp.float32_t[::1] param, cnp.float32_t[::1] grad,
                 cnp.float32_t[::1] m, cnp.float32_t[::1] v,
                 long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef float decay = <float>(1.0 - lr * weight_decay)
    cdef float b1 = <float>beta1
    cdef float b2 = <float>beta2
    cdef float omb1 = <float>1.0 - b1
    cdef float omb2 = <float>1.0 - b2
    cdef float m_scale = <float>(1.0 / (1.0 - pow(beta1, step)))
    cdef float v_scale = <float>(1.0 / (1.0 - pow(beta2, step)))
    cdef float lr32 = <float>lr
    cdef float eps32 = <float>eps
    cdef bint do_decay = weight_decay != 0.0
    cdef float g
    for i in range(n):
        if do_decay:
            param[i] *= decay
        g = grad[i]
        m[i] = b1 * m[i] + omb1 * g
        v[i] = b2 * v[i] + (omb2 * g) * g
        param[i] -= lr32 * (m[i] * m_scale) / (sqrtf(v[i] * v_scale) + eps32)
