"""Pure-numpy fallback for the patch packing/scattering kernels.

Same contract as the compiled ``_convcore`` module; used when the
extension is unavailable (or forced via ``LAPSEGEN_BACKEND=numpy``).
Implemented with one strided slice copy per kernel tap, which keeps it
vectorized but is several times slower than the compiled loops on the
small-channel layers.
"""
import numpy as np

BACKEND_NAME = "numpy"


def _padded_extent(oh, kh, stride, pt, H):
    # smallest padded height covering every tap the gather touches
    return max((oh - 1) * stride + kh, pt + H)


def im2col(x, kh, kw, stride, pt, pl, cols):
    n, H, W, ci = x.shape
    oh, ow = cols.shape[1], cols.shape[2]
    ph = _padded_extent(oh, kh, stride, pt, H)
    pw = _padded_extent(ow, kw, stride, pl, W)
    xp = np.zeros((n, ph, pw, ci), dtype=x.dtype)
    xp[:, pt:pt + H, pl:pl + W, :] = x
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = xp[:, a:a + stride * oh:stride,
                                        b:b + stride * ow:stride, :]


def col2im(cols, stride, pt, pl, out):
    n, oh, ow, kh, kw, ci = cols.shape
    H, W = out.shape[1], out.shape[2]
    ph = _padded_extent(oh, kh, stride, pt, H)
    pw = _padded_extent(ow, kw, stride, pl, W)
    acc = np.zeros((n, ph, pw, ci), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            acc[:, a:a + stride * oh:stride,
                b:b + stride * ow:stride, :] += cols[:, :, :, a, b, :]
    out += acc[:, pt:pt + H, pl:pl + W, :]
