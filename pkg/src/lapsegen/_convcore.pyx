# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch packing/scattering kernels for strided 2-D convolution.

Only the gather/scatter loops live here; the actual contractions are
BLAS matmuls issued from Python. Loops are single-threaded on purpose:
they are memory bound, and worker threads would contend with the BLAS
pool for cores. Iteration order is fixed, so results are deterministic.
"""
import numpy as np

ctypedef fused real:
    float
    double

BACKEND_NAME = "cython"


def im2col(real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pt, Py_ssize_t pl,
           real[:, :, :, :, :, ::1] cols):
    """Gather 5-D patch columns: cols[n,oh,ow,a,b,c] = x[n, oh*s+a-pt, ow*s+b-pl, c].

    Out-of-range taps (implicit zero padding) are zero-filled.
    """
    cdef Py_ssize_t n = x.shape[0], H = x.shape[1], W = x.shape[2], ci = x.shape[3]
    cdef Py_ssize_t oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t i, oy, ox, a, b, c, ih, iw
    with nogil:
        for i in range(n):
            for oy in range(oh):
                for a in range(kh):
                    ih = oy * stride + a - pt
                    if 0 <= ih < H:
                        for ox in range(ow):
                            for b in range(kw):
                                iw = ox * stride + b - pl
                                if 0 <= iw < W:
                                    for c in range(ci):
                                        cols[i, oy, ox, a, b, c] = x[i, ih, iw, c]
                                else:
                                    for c in range(ci):
                                        cols[i, oy, ox, a, b, c] = 0.0
                    else:
                        for ox in range(ow):
                            for b in range(kw):
                                for c in range(ci):
                                    cols[i, oy, ox, a, b, c] = 0.0


def col2im(real[:, :, :, :, :, ::1] cols, Py_ssize_t stride,
           Py_ssize_t pt, Py_ssize_t pl, real[:, :, :, ::1] out):
    """Scatter-add patch columns back onto the (pre-zeroed) image grid.

    Exact adjoint of :func:`im2col`; taps that landed in the padding are
    dropped.
    """
    cdef Py_ssize_t n = out.shape[0], H = out.shape[1], W = out.shape[2], ci = out.shape[3]
    cdef Py_ssize_t oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4]
    cdef Py_ssize_t i, oy, ox, a, b, c, ih, iw
    with nogil:
        for i in range(n):
            for oy in range(oh):
                for a in range(kh):
                    ih = oy * stride + a - pt
                    if ih < 0 or ih >= H:
                        continue
                    for ox in range(ow):
                        for b in range(kw):
                            iw = ox * stride + b - pl
                            if iw < 0 or iw >= W:
                                continue
                            for c in range(ci):
                                out[i, ih, iw, c] += cols[i, oy, ox, a, b, c]
