# Compiled convolution hot kernels; mirrors numpy_backend exactly.
# Inputs are pre-padded and C-contiguous; float32 and float64 via fused types.
# Loops are length-innermost so the compiler can vectorize the AXPY/dot forms.
# The stem kernels cross over: explicit loops win on small batches, the im2col
# GEMM in numpy_backend wins on large ones, so those two dispatch on the batch.

import numpy as np

from . import numpy_backend as _gemm

cimport cython

NAME = "compiled"

# measured crossover on the build host; loops win below, BLAS above
_STEM_GEMM_MIN_BATCH = 32

ctypedef fused real:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
def _dwconv1d_fwd(const real[:, :, ::1] xp, const real[:, ::1] w, real[:, :, ::1] out):
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], Lp = xp.shape[2]
    cdef Py_ssize_t K = w.shape[1], Lo = Lp - K + 1
    cdef Py_ssize_t n, c, l, k
    cdef real wv
    with nogil:
        for n in range(N):
            for c in range(C):
                for l in range(Lo):
                    out[n, c, l] = xp[n, c, l] * w[c, 0]
                for k in range(1, K):
                    wv = w[c, k]
                    for l in range(Lo):
                        out[n, c, l] += xp[n, c, l + k] * wv


@cython.boundscheck(False)
@cython.wraparound(False)
def _dwconv1d_bwd(const real[:, :, ::1] xp, const real[:, ::1] w,
                  const real[:, :, ::1] g, real[:, :, ::1] dxp, real[:, ::1] dw):
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[1], Lp = xp.shape[2]
    cdef Py_ssize_t K = w.shape[1], Lo = Lp - K + 1
    cdef Py_ssize_t n, c, l, k
    cdef real wv, a0, a1, a2, a3
    with nogil:
        for n in range(N):
            for c in range(C):
                for k in range(K):
                    wv = w[c, k]
                    for l in range(Lo):
                        dxp[n, c, l + k] += g[n, c, l] * wv
                    a0 = a1 = a2 = a3 = 0
                    for l in range(0, Lo - 3, 4):
                        a0 += g[n, c, l] * xp[n, c, l + k]
                        a1 += g[n, c, l + 1] * xp[n, c, l + 1 + k]
                        a2 += g[n, c, l + 2] * xp[n, c, l + 2 + k]
                        a3 += g[n, c, l + 3] * xp[n, c, l + 3 + k]
                    for l in range(Lo - Lo % 4, Lo):
                        a0 += g[n, c, l] * xp[n, c, l + k]
                    dw[c, k] += a0 + a1 + a2 + a3


@cython.boundscheck(False)
@cython.wraparound(False)
def _stemconv_fwd(const real[:, :, ::1] xp, const real[:, :, ::1] w, real[:, :, ::1] out):
    cdef Py_ssize_t N = xp.shape[0], Lp = xp.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], Lo = Lp - K + 1
    cdef Py_ssize_t n, o, l, k
    cdef real w0, w1
    with nogil:
        for n in range(N):
            for o in range(O):
                for l in range(Lo):
                    out[n, o, l] = 0
                for k in range(K):
                    w0 = w[o, 0, k]
                    w1 = w[o, 1, k]
                    for l in range(Lo):
                        out[n, o, l] += xp[n, 0, l + k] * w0 + xp[n, 1, l + k] * w1


@cython.boundscheck(False)
@cython.wraparound(False)
def _stemconv_bwd(const real[:, :, ::1] xp, const real[:, :, ::1] w,
                  const real[:, :, ::1] g, real[:, :, ::1] dxp, real[:, :, ::1] dw):
    cdef Py_ssize_t N = xp.shape[0], Lp = xp.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], Lo = Lp - K + 1
    cdef Py_ssize_t n, o, l, k, r
    cdef real wv, a0, a1, a2, a3
    with nogil:
        for n in range(N):
            for o in range(O):
                for r in range(2):
                    for k in range(K):
                        wv = w[o, r, k]
                        for l in range(Lo):
                            dxp[n, r, l + k] += g[n, o, l] * wv
                        a0 = a1 = a2 = a3 = 0
                        for l in range(0, Lo - 3, 4):
                            a0 += g[n, o, l] * xp[n, r, l + k]
                            a1 += g[n, o, l + 1] * xp[n, r, l + 1 + k]
                            a2 += g[n, o, l + 2] * xp[n, r, l + 2 + k]
                            a3 += g[n, o, l + 3] * xp[n, r, l + 3 + k]
                        for l in range(Lo - Lo % 4, Lo):
                            a0 += g[n, o, l] * xp[n, r, l + k]
                        dw[o, r, k] += a0 + a1 + a2 + a3


def dwconv1d_fwd(xp, w):
    N, C, Lp = xp.shape
    K = w.shape[1]
    out = np.empty((N, C, Lp - K + 1), dtype=xp.dtype)
    _dwconv1d_fwd(xp, w, out)
    return out


def dwconv1d_bwd(xp, w, g):
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    _dwconv1d_bwd(xp, w, g, dxp, dw)
    return dxp, dw


def stemconv_fwd(xp, w):
    N, _, Lp = xp.shape
    if N >= _STEM_GEMM_MIN_BATCH:
        return _gemm.stemconv_fwd(xp, w)
    O, _, K = w.shape
    out = np.empty((N, O, Lp - K + 1), dtype=xp.dtype)
    _stemconv_fwd(xp, w, out)
    return out


def stemconv_bwd(xp, w, g):
    if xp.shape[0] >= _STEM_GEMM_MIN_BATCH:
        return _gemm.stemconv_bwd(xp, w, g)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    _stemconv_bwd(xp, w, g, dxp, dw)
    return dxp, dw
