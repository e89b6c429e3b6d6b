# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled array kernels: same-padded 3x3 cross-correlation via im2col plus
BLAS dgemm, 2x2 max pooling, and 2x2 stride-2 transposed convolution.

Must produce the same results as kernels._numpy_core within floating-point
accumulation-order tolerance; the test suite compares the two backends.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm_rm(double* a, double* b, double* c,
                   int m, int k, int n) noexcept nogil:
    # Row-major C[m,n] = A[m,k] . B[k,n] through Fortran dgemm by computing
    # the transposed product with swapped operands.
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm("n", "n", &n, &m, &k, &one, b, &n, a, &k, &zero, c, &n)


cdef void _pack_col(double[:, :, :, ::1] xp, double[:, ::1] col,
                    int n, int c, int h, int w) noexcept nogil:
    cdef int i, ch, y, x, dy, dx
    cdef Py_ssize_t row, kk
    for i in range(n):
        for y in range(h):
            for x in range(w):
                row = ((<Py_ssize_t> i * h) + y) * w + x
                kk = 0
                for ch in range(c):
                    for dy in range(3):
                        for dx in range(3):
                            col[row, kk] = xp[i, ch, y + dy, x + dx]
                            kk += 1


def conv3x3_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] k,
                    double[::1] b):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = k.shape[0]
    if k.shape[1] != c:
        raise ValueError(f"conv3x3_forward: input has {c} channels, kernel expects {k.shape[1]}")
    if k.shape[2] != 3 or k.shape[3] != 3:
        raise ValueError("conv3x3_forward: compiled path handles 3x3 kernels only")
    if b.shape[0] != o:
        raise ValueError(f"conv3x3_forward: bias shape ({b.shape[0]},) does not match {o} outputs")
    cdef Py_ssize_t m = <Py_ssize_t> n * h * w
    cdef Py_ssize_t kdim = <Py_ssize_t> c * 9

    xp_arr = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
    xp_arr[:, :, 1:h + 1, 1:w + 1] = np.asarray(x)
    col_arr = np.empty((m, kdim), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, ::1] col = col_arr
    with nogil:
        _pack_col(xp, col, n, c, h, w)

    kt_arr = np.ascontiguousarray(np.asarray(k).reshape(o, kdim).T)
    out2_arr = np.empty((m, o), dtype=np.float64)
    cdef double[:, ::1] kt = kt_arr
    cdef double[:, ::1] out2 = out2_arr
    with nogil:
        _gemm_rm(&col[0, 0], &kt[0, 0], &out2[0, 0], <int> m, <int> kdim, o)
    out2_arr += np.asarray(b)[None, :]
    return np.ascontiguousarray(out2_arr.reshape(n, h, w, o).transpose(0, 3, 1, 2))


def conv3x3_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] k,
                     double[:, :, :, ::1] gout):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = k.shape[0]
    if gout.shape[0] != n or gout.shape[1] != o or gout.shape[2] != h or gout.shape[3] != w:
        raise ValueError(
            f"conv3x3_backward: grad shape ({gout.shape[0]}, {gout.shape[1]}, "
            f"{gout.shape[2]}, {gout.shape[3]}), expected {(n, o, h, w)}")
    cdef Py_ssize_t m = <Py_ssize_t> n * h * w
    cdef Py_ssize_t kdim = <Py_ssize_t> c * 9

    xp_arr = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
    xp_arr[:, :, 1:h + 1, 1:w + 1] = np.asarray(x)
    col_arr = np.empty((m, kdim), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef double[:, ::1] col = col_arr
    with nogil:
        _pack_col(xp, col, n, c, h, w)

    g_arr = np.asarray(gout)
    gout2_arr = np.ascontiguousarray(g_arr.transpose(0, 2, 3, 1).reshape(m, o))
    gout2t_arr = np.ascontiguousarray(gout2_arr.T)
    kmat_arr = np.ascontiguousarray(np.asarray(k).reshape(o, kdim))
    gkmat_arr = np.empty((o, kdim), dtype=np.float64)
    gxcol_arr = np.empty((m, kdim), dtype=np.float64)
    cdef double[:, ::1] gout2 = gout2_arr
    cdef double[:, ::1] gout2t = gout2t_arr
    cdef double[:, ::1] kmat = kmat_arr
    cdef double[:, ::1] gkmat = gkmat_arr
    cdef double[:, ::1] gxcol = gxcol_arr
    with nogil:
        # dK[o, ck] = sum_m gout2T[o, m] col[m, ck]
        _gemm_rm(&gout2t[0, 0], &col[0, 0], &gkmat[0, 0], o, <int> m, <int> kdim)
        # dcol[m, ck] = sum_o gout2[m, o] kmat[o, ck]
        _gemm_rm(&gout2[0, 0], &kmat[0, 0], &gxcol[0, 0], <int> m, o, <int> kdim)

    gxp_arr = np.zeros((n, c, h + 2, w + 2), dtype=np.float64)
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef int i, ch, y, x_, dy, dx
    cdef Py_ssize_t row, kk
    with nogil:
        for i in range(n):
            for y in range(h):
                for x_ in range(w):
                    row = ((<Py_ssize_t> i * h) + y) * w + x_
                    kk = 0
                    for ch in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                gxp[i, ch, y + dy, x_ + dx] += gxcol[row, kk]
                                kk += 1
    gx = np.ascontiguousarray(gxp_arr[:, :, 1:h + 1, 1:w + 1])
    gk = gkmat_arr.reshape(o, c, 3, 3)
    gb = g_arr.sum(axis=(0, 2, 3))
    return gx, gk, gb


def pool2x2_forward(double[:, :, :, ::1] x):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    if h % 2 or w % 2:
        raise ValueError(f"pool2x2_forward: spatial dims must be even, got {h}x{w}")
    cdef int hh = h // 2, ww = w // 2
    out_arr = np.empty((n, c, hh, ww), dtype=np.float64)
    idx_arr = np.empty((n, c, hh, ww), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef int i, ch, y, x_, dy, dx
    cdef double best, v
    cdef unsigned char pos, bi
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(hh):
                    for x_ in range(ww):
                        best = x[i, ch, 2 * y, 2 * x_]
                        bi = 0
                        pos = 0
                        for dy in range(2):
                            for dx in range(2):
                                if pos > 0:
                                    v = x[i, ch, 2 * y + dy, 2 * x_ + dx]
                                    if v > best:
                                        best = v
                                        bi = pos
                                pos += 1
                        out[i, ch, y, x_] = best
                        idx[i, ch, y, x_] = bi
    return out_arr, idx_arr


def pool2x2_backward(unsigned char[:, :, :, ::1] idx, double[:, :, :, ::1] gout):
    cdef int n = gout.shape[0], c = gout.shape[1], hh = gout.shape[2], ww = gout.shape[3]
    if idx.shape[0] != n or idx.shape[1] != c or idx.shape[2] != hh or idx.shape[3] != ww:
        raise ValueError(
            f"pool2x2_backward: index shape ({idx.shape[0]}, {idx.shape[1]}, "
            f"{idx.shape[2]}, {idx.shape[3]}), expected {(n, c, hh, ww)}")
    gx_arr = np.zeros((n, c, 2 * hh, 2 * ww), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef int i, ch, y, x_
    cdef unsigned char bi
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(hh):
                    for x_ in range(ww):
                        bi = idx[i, ch, y, x_]
                        gx[i, ch, 2 * y + (bi >> 1), 2 * x_ + (bi & 1)] = gout[i, ch, y, x_]
    return gx_arr


def deconv2x2_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] k,
                      double[::1] b):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = k.shape[0]
    if k.shape[2] != 2 or k.shape[3] != 2:
        raise ValueError(f"deconv2x2_forward: kernel must be 2x2, got {k.shape[2]}x{k.shape[3]}")
    if k.shape[1] != c:
        raise ValueError(f"deconv2x2_forward: input has {c} channels, kernel expects {k.shape[1]}")
    if b.shape[0] != o:
        raise ValueError(f"deconv2x2_forward: bias shape ({b.shape[0]},) does not match {o} outputs")
    out_arr = np.empty((n, o, 2 * h, 2 * w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef int i, ch, oc, y, x_, dy, dx
    cdef double v
    with nogil:
        for i in range(n):
            for oc in range(o):
                for y in range(2 * h):
                    for x_ in range(2 * w):
                        out[i, oc, y, x_] = b[oc]
        for i in range(n):
            for ch in range(c):
                for y in range(h):
                    for x_ in range(w):
                        v = x[i, ch, y, x_]
                        for oc in range(o):
                            for dy in range(2):
                                for dx in range(2):
                                    out[i, oc, 2 * y + dy, 2 * x_ + dx] += v * k[oc, ch, dy, dx]
    return out_arr


def deconv2x2_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] k,
                       double[:, :, :, ::1] gout):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = k.shape[0]
    if gout.shape[0] != n or gout.shape[1] != o or gout.shape[2] != 2 * h or gout.shape[3] != 2 * w:
        raise ValueError(
            f"deconv2x2_backward: grad shape ({gout.shape[0]}, {gout.shape[1]}, "
            f"{gout.shape[2]}, {gout.shape[3]}), expected {(n, o, 2 * h, 2 * w)}")
    gx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    gk_arr = np.zeros((o, c, 2, 2), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef int i, ch, oc, y, x_, dy, dx
    cdef double acc, v, g
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(h):
                    for x_ in range(w):
                        v = x[i, ch, y, x_]
                        acc = 0.0
                        for oc in range(o):
                            for dy in range(2):
                                for dx in range(2):
                                    g = gout[i, oc, 2 * y + dy, 2 * x_ + dx]
                                    acc += g * k[oc, ch, dy, dx]
                                    gk[oc, ch, dy, dx] += v * g
                        gx[i, ch, y, x_] = acc
    gb = np.asarray(gout).sum(axis=(0, 2, 3))
    return gx_arr, gk_arr, gb
