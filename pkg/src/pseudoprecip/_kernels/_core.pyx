# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Same contract as ``pykernels`` (the reference implementation); dense
products go through BLAS dgemm, elementwise and scatter kernels are
plain C loops.
"""

import numpy as np

from libc.math cimport tanh as c_tanh, sqrt as c_sqrt, pow as c_pow, floor as c_floor
from scipy.linalg.cython_blas cimport dgemm

name = "cython"


cdef void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                double* a, int lda, double* b, int ldb, double beta,
                double* c, int ldc) noexcept nogil:
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def affine_forward(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b):
    cdef Py_ssize_t n = x.shape[0], nin = x.shape[1], nout = w.shape[0]
    y_arr = np.empty((n, nout), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, o
    if n == 0:
        return y_arr
    with nogil:
        # row-major (n,in)x(out,in)^T+b via column-major dgemm on transposes
        _gemm(b'T', b'N', <int>nout, <int>n, <int>nin, 1.0,
              <double*>&w[0, 0], <int>nin, <double*>&x[0, 0], <int>nin, 0.0,
              &y[0, 0], <int>nout)
        for i in range(n):
            for o in range(nout):
                y[i, o] += b[o]
    return y_arr


def affine_backward(const double[:, ::1] x, const double[:, ::1] w, const double[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], nin = x.shape[1], nout = w.shape[0]
    dx_arr = np.empty((n, nin), dtype=np.float64)
    dw_arr = np.empty((nout, nin), dtype=np.float64)
    db_arr = np.zeros(nout, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t i, o
    if n == 0:
        dw_arr[:] = 0.0
        return dx_arr, dw_arr, db_arr
    with nogil:
        _gemm(b'N', b'N', <int>nin, <int>n, <int>nout, 1.0,
              <double*>&w[0, 0], <int>nin, <double*>&dy[0, 0], <int>nout, 0.0,
              &dx[0, 0], <int>nin)
        _gemm(b'N', b'T', <int>nin, <int>nout, <int>n, 1.0,
              <double*>&x[0, 0], <int>nin, <double*>&dy[0, 0], <int>nout, 0.0,
              &dw[0, 0], <int>nin)
        for i in range(n):
            for o in range(nout):
                db[o] += dy[i, o]
    return dx_arr, dw_arr, db_arr


def tanh_forward(const double[:, ::1] z):
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    a_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                a[i, j] = c_tanh(z[i, j])
    return a_arr


def tanh_backward(const double[:, ::1] a, const double[:, ::1] da):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    dz_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                dz[i, j] = da[i, j] * (1.0 - a[i, j] * a[i, j])
    return dz_arr


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef double c1 = 1.0 - c_pow(beta1, <double>t)
    cdef double c2 = 1.0 - c_pow(beta2, <double>t)
    cdef Py_ssize_t i
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / c1
            vhat = v[i] / c2
            p[i] -= lr * mhat / (c_sqrt(vhat) + eps)


def sorted_quantiles(const double[::1] sx, const double[::1] probs):
    cdef Py_ssize_t n = sx.shape[0], nb = probs.shape[0]
    q_arr = np.empty(nb, dtype=np.float64)
    cdef double[::1] q = q_arr
    cdef Py_ssize_t j, lo
    cdef double h, frac
    if n == 1:
        q_arr[:] = sx[0]
        return q_arr
    with nogil:
        for j in range(nb):
            h = probs[j] * (n - 1)
            lo = <Py_ssize_t>c_floor(h)
            if lo < 0:
                lo = 0
            elif lo > n - 2:
                lo = n - 2
            frac = h - lo
            q[j] = sx[lo] * (1.0 - frac) + sx[lo + 1] * frac
    return q_arr


def quantile_loss_grad(const double[::1] sx, const double[::1] probs, const double[::1] targets):
    cdef Py_ssize_t n = sx.shape[0], nb = probs.shape[0]
    grad_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef Py_ssize_t j, lo
    cdef double h, frac, q, r, coef, loss = 0.0
    if n == 1:
        for j in range(nb):
            r = sx[0] - targets[j]
            loss += r * r
            grad[0] += 2.0 * r / nb
        return loss / nb, grad_arr
    with nogil:
        for j in range(nb):
            h = probs[j] * (n - 1)
            lo = <Py_ssize_t>c_floor(h)
            if lo < 0:
                lo = 0
            elif lo > n - 2:
                lo = n - 2
            frac = h - lo
            q = sx[lo] * (1.0 - frac) + sx[lo + 1] * frac
            r = q - targets[j]
            loss += r * r
            coef = 2.0 * r / nb
            grad[lo] += coef * (1.0 - frac)
            grad[lo + 1] += coef * frac
    return loss / nb, grad_arr
