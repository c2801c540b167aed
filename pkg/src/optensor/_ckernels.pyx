# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv1d kernels.

Column buffers are filled in C and contracted with a single BLAS dgemm, which
skips the pad/stack/transpose temporaries of the numpy path.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_rm(char ta, char tb, int m, int n, int k, const double *a, int lda,
                   const double *b, int ldb, double beta, double *c, int ldc) noexcept nogil:
    # row-major C(m, n) = op(A) @ op(B) + beta * C, via column-major C^T = op(B)^T op(A)^T
    cdef double one = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &one, <double *>b, &ldb, <double *>a, &lda, &beta, c, &ldc)


cdef void _im2col(const double[:, :, ::1] xv, double[:, ::1] cols, Py_ssize_t k,
                  Py_ssize_t dilation, Py_ssize_t pad_left, Py_ssize_t out_w) noexcept nogil:
    # cols[(c, j), (n, p)] = x[n, c, p + j*dilation - pad_left], zero outside
    cdef Py_ssize_t bsz = xv.shape[0], cin = xv.shape[1], width = xv.shape[2]
    cdef Py_ssize_t n, c, j, p, off, src
    for c in range(cin):
        for j in range(k):
            off = j * dilation - pad_left
            for n in range(bsz):
                for p in range(out_w):
                    src = p + off
                    if 0 <= src < width:
                        cols[c * k + j, n * out_w + p] = xv[n, c, src]
                    else:
                        cols[c * k + j, n * out_w + p] = 0.0


def conv1d_forward(x, w, b, Py_ssize_t dilation, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t bsz = xv.shape[0], cin = xv.shape[1], width = xv.shape[2]
    cdef Py_ssize_t cout = wv.shape[0], k = wv.shape[2]
    cdef Py_ssize_t out_w = width + pad_left + pad_right - (k - 1) * dilation
    cdef Py_ssize_t ck = cin * k, cols_n = bsz * out_w
    cdef double[:, ::1] cols = np.empty((ck, cols_n))
    cdef double[:, ::1] res = np.empty((cout, cols_n))
    out = np.empty((bsz, cout, out_w))
    cdef double[:, :, ::1] ov = out
    cdef const double[::1] bv
    cdef bint has_bias = b is not None
    cdef Py_ssize_t n, o, p
    cdef double bias
    if has_bias:
        bv = np.ascontiguousarray(b, dtype=np.float64)
    with nogil:
        _im2col(xv, cols, k, dilation, pad_left, out_w)
        _gemm_rm(b'N', b'N', <int>cout, <int>cols_n, <int>ck, &wv[0, 0, 0], <int>ck,
                 &cols[0, 0], <int>cols_n, 0.0, &res[0, 0], <int>cols_n)
        for o in range(cout):
            bias = bv[o] if has_bias else 0.0
            for n in range(bsz):
                for p in range(out_w):
                    ov[n, o, p] = res[o, n * out_w + p] + bias
    return out


def conv1d_backward(g, x, w, Py_ssize_t dilation, Py_ssize_t pad_left, Py_ssize_t pad_right,
                    bint need_x=True, bint need_w=True):
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t bsz = xv.shape[0], cin = xv.shape[1], width = xv.shape[2]
    cdef Py_ssize_t cout = wv.shape[0], k = wv.shape[2], out_w = gv.shape[2]
    cdef Py_ssize_t ck = cin * k, cols_n = bsz * out_w
    cdef Py_ssize_t n, o, c, j, p, off, src
    cdef double[:, ::1] gmat = np.empty((cout, cols_n))
    cdef double[:, ::1] cols
    cdef double[:, ::1] dcols
    cdef double[:, :, ::1] gxv
    gx = gw = None
    with nogil:
        for n in range(bsz):
            for o in range(cout):
                for p in range(out_w):
                    gmat[o, n * out_w + p] = gv[n, o, p]
    if need_w:
        cols = np.empty((ck, cols_n))
        gw = np.empty((cout, cin, k))
        with nogil:
            _im2col(xv, cols, k, dilation, pad_left, out_w)
        _gemm_into(gmat, cols, gw, cout, ck, cols_n)
    if need_x:
        dcols = np.empty((ck, cols_n))
        gx = np.zeros((bsz, cin, width))
        gxv = gx
        with nogil:
            # dcols = W^T @ G ; W stored row-major (cout, ck)
            _gemm_rm(b'T', b'N', <int>ck, <int>cols_n, <int>cout, &wv[0, 0, 0], <int>ck,
                     &gmat[0, 0], <int>cols_n, 0.0, &dcols[0, 0], <int>cols_n)
            for c in range(cin):
                for j in range(k):
                    off = j * dilation - pad_left
                    for n in range(bsz):
                        for p in range(out_w):
                            src = p + off
                            if 0 <= src < width:
                                gxv[n, c, src] += dcols[c * k + j, n * out_w + p]
    return gx, gw


cdef void _gemm_into(double[:, ::1] gmat, double[:, ::1] cols, object gw,
                     Py_ssize_t cout, Py_ssize_t ck, Py_ssize_t cols_n):
    # gw(cout, ck) = G(cout, cols_n) @ cols(ck, cols_n)^T
    cdef double[:, :, ::1] gwv = gw
    with nogil:
        _gemm_rm(b'N', b'T', <int>cout, <int>ck, <int>cols_n, &gmat[0, 0], <int>cols_n,
                 &cols[0, 0], <int>cols_n, 0.0, &gwv[0, 0, 0], <int>ck)
