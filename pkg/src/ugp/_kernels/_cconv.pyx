# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (fast path).

Same contracts as numpy_backend: NCHW float64, valid padding.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(x, w, b, int stride):
    cdef cnp.ndarray[double, ndim=4, mode="c"] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ba = np.ascontiguousarray(b, dtype=np.float64)

    cdef Py_ssize_t n = xa.shape[0], c = xa.shape[1], h = xa.shape[2], wd = xa.shape[3]
    cdef Py_ssize_t f = wa.shape[0], kh = wa.shape[2], kw = wa.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (wd - kw) // stride + 1

    out = np.empty((n, f, oh, ow), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] ya = out
    cdef Py_ssize_t i, o, a, j, ci, ki, kj
    cdef double acc

    with nogil:
        for i in range(n):
            for o in range(f):
                for a in range(oh):
                    for j in range(ow):
                        acc = ba[o]
                        for ci in range(c):
                            for ki in range(kh):
                                for kj in range(kw):
                                    acc += (
                                        xa[i, ci, a * stride + ki, j * stride + kj]
                                        * wa[o, ci, ki, kj]
                                    )
                        ya[i, o, a, j] = acc
    return out


def conv2d_backward(x, w, int stride, dy):
    cdef cnp.ndarray[double, ndim=4, mode="c"] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] ga = np.ascontiguousarray(dy, dtype=np.float64)

    cdef Py_ssize_t n = xa.shape[0], c = xa.shape[1], h = xa.shape[2], wd = xa.shape[3]
    cdef Py_ssize_t f = wa.shape[0], kh = wa.shape[2], kw = wa.shape[3]
    cdef Py_ssize_t oh = ga.shape[2], ow = ga.shape[3]

    dx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    dw_arr = np.zeros((f, c, kh, kw), dtype=np.float64)
    db_arr = np.zeros(f, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] dxa = dx_arr
    cdef cnp.ndarray[double, ndim=4, mode="c"] dwa = dw_arr
    cdef cnp.ndarray[double, ndim=1, mode="c"] dba = db_arr

    cdef Py_ssize_t i, o, a, j, ci, ki, kj
    cdef double g

    with nogil:
        for i in range(n):
            for o in range(f):
                for a in range(oh):
                    for j in range(ow):
                        g = ga[i, o, a, j]
                        dba[o] += g
                        for ci in range(c):
                            for ki in range(kh):
                                for kj in range(kw):
                                    dxa[i, ci, a * stride + ki, j * stride + kj] += g * wa[o, ci, ki, kj]
                                    dwa[o, ci, ki, kj] += g * xa[i, ci, a * stride + ki, j * stride + kj]
    return dx_arr, dw_arr, db_arr
