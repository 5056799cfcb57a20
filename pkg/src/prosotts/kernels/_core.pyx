# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in `pure.py`.

Same operation order and tie-breaking as the reference backend; the
parity tests in tests/test_kernels.py hold the two together.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log1p

cnp.import_array()

NAME = "compiled"


cdef inline double _logaddexp(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def conv1d_fwd(double[:, ::1] x, double[:, :, ::1] w, bias, int dilation):
    cdef Py_ssize_t t_len = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_size = w.shape[0], cout = w.shape[2]
    cdef Py_ssize_t reach = (k_size - 1) // 2 * dilation
    out = np.zeros((t_len, cout))
    cdef double[:, ::1] y = out
    cdef double[::1] b
    cdef Py_ssize_t t, k, ci, co, src
    cdef double xv
    with nogil:
        for t in range(t_len):
            for k in range(k_size):
                src = t + k * dilation - reach
                if src < 0 or src >= t_len:
                    continue
                for ci in range(cin):
                    xv = x[src, ci]
                    if xv == 0.0:
                        continue
                    for co in range(cout):
                        y[t, co] += xv * w[k, ci, co]
    if bias is not None:
        b = bias
        for t in range(t_len):
            for co in range(cout):
                y[t, co] += b[co]
    return out


def conv1d_bwd(double[:, ::1] x, double[:, :, ::1] w, double[:, ::1] g,
               int dilation):
    cdef Py_ssize_t t_len = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_size = w.shape[0], cout = w.shape[2]
    cdef Py_ssize_t reach = (k_size - 1) // 2 * dilation
    gx_arr = np.zeros((t_len, cin))
    gw_arr = np.zeros((k_size, cin, cout))
    gb_arr = np.zeros(cout)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t t, k, ci, co, src
    cdef double gv, xv
    with nogil:
        for t in range(t_len):
            for co in range(cout):
                gb[co] += g[t, co]
            for k in range(k_size):
                src = t + k * dilation - reach
                if src < 0 or src >= t_len:
                    continue
                for ci in range(cin):
                    xv = x[src, ci]
                    gv = 0.0
                    for co in range(cout):
                        gv += g[t, co] * w[k, ci, co]
                        gw[k, ci, co] += xv * g[t, co]
                    gx[src, ci] += gv
    return gx_arr, gw_arr, gb_arr


def convt1d_fwd(double[:, ::1] x, double[:, :, ::1] w, bias, int stride):
    cdef Py_ssize_t t_len = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_size = w.shape[0], cout = w.shape[2]
    cdef Py_ssize_t off = (k_size - stride) // 2
    cdef Py_ssize_t out_len = t_len * stride
    out = np.zeros((out_len, cout))
    cdef double[:, ::1] y = out
    cdef double[::1] b
    cdef Py_ssize_t t, k, ci, co, dst
    cdef double xv
    with nogil:
        for t in range(t_len):
            for k in range(k_size):
                dst = t * stride + k - off
                if dst < 0 or dst >= out_len:
                    continue
                for ci in range(cin):
                    xv = x[t, ci]
                    if xv == 0.0:
                        continue
                    for co in range(cout):
                        y[dst, co] += xv * w[k, ci, co]
    if bias is not None:
        b = bias
        for dst in range(out_len):
            for co in range(cout):
                y[dst, co] += b[co]
    return out


def convt1d_bwd(double[:, ::1] x, double[:, :, ::1] w, double[:, ::1] g,
                int stride):
    cdef Py_ssize_t t_len = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t k_size = w.shape[0], cout = w.shape[2]
    cdef Py_ssize_t off = (k_size - stride) // 2
    cdef Py_ssize_t out_len = t_len * stride
    gx_arr = np.zeros((t_len, cin))
    gw_arr = np.zeros((k_size, cin, cout))
    gb_arr = np.zeros(cout)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t t, k, ci, co, dst
    cdef double gv, xv
    with nogil:
        for dst in range(out_len):
            for co in range(cout):
                gb[co] += g[dst, co]
        for t in range(t_len):
            for k in range(k_size):
                dst = t * stride + k - off
                if dst < 0 or dst >= out_len:
                    continue
                for ci in range(cin):
                    xv = x[t, ci]
                    gv = 0.0
                    for co in range(cout):
                        gv += g[dst, co] * w[k, ci, co]
                        gw[k, ci, co] += xv * g[dst, co]
                    gx[t, ci] += gv
    return gx_arr, gw_arr, gb_arr


def forward_sum_fb(double[:, ::1] logv):
    cdef Py_ssize_t t_len = logv.shape[0], n_len = logv.shape[1]
    alpha_arr = np.full((t_len, n_len), -np.inf)
    beta_arr = np.full((t_len, n_len), -np.inf)
    post_arr = np.zeros((t_len, n_len))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] post = post_arr
    cdef Py_ssize_t t, n
    cdef double total, stay, adv, v
    with nogil:
        alpha[0, 0] = logv[0, 0]
        for t in range(1, t_len):
            for n in range(n_len):
                stay = alpha[t - 1, n]
                adv = alpha[t - 1, n - 1] if n > 0 else -INFINITY
                alpha[t, n] = logv[t, n] + _logaddexp(stay, adv)
        total = alpha[t_len - 1, n_len - 1]
        beta[t_len - 1, n_len - 1] = 0.0
        for t in range(t_len - 2, -1, -1):
            for n in range(n_len):
                stay = beta[t + 1, n] + logv[t + 1, n]
                if n + 1 < n_len:
                    adv = beta[t + 1, n + 1] + logv[t + 1, n + 1]
                else:
                    adv = -INFINITY
                beta[t, n] = _logaddexp(stay, adv)
        for t in range(t_len):
            for n in range(n_len):
                v = alpha[t, n] + beta[t, n] - total
                if v == v and v != INFINITY:  # not NaN, not +inf
                    post[t, n] = exp(v)
    return -total, post_arr


def viterbi_path(double[:, ::1] logv):
    cdef Py_ssize_t t_len = logv.shape[0], n_len = logv.shape[1]
    q_arr = np.full(n_len, -np.inf)
    adv_arr = np.zeros((t_len, n_len), dtype=np.int8)
    cols_arr = np.zeros(t_len, dtype=np.int64)
    cdef double[::1] q = q_arr
    cdef signed char[:, ::1] advance = adv_arr
    cdef long long[::1] cols = cols_arr
    cdef Py_ssize_t t, n
    cdef double stay, adv
    with nogil:
        q[0] = logv[0, 0]
        for n in range(1, n_len):
            q[n] = -INFINITY
        for t in range(1, t_len):
            for n in range(n_len - 1, -1, -1):
                stay = q[n]
                adv = q[n - 1] if n > 0 else -INFINITY
                if adv > stay:
                    advance[t, n] = 1
                    q[n] = logv[t, n] + adv
                else:
                    q[n] = logv[t, n] + stay
        n = n_len - 1
        for t in range(t_len - 1, 0, -1):
            cols[t] = n
            if advance[t, n]:
                n -= 1
        cols[0] = n
    return cols_arr


def dtw_accum(double[:, ::1] cost):
    cdef Py_ssize_t ta = cost.shape[0], tb = cost.shape[1]
    acc_arr = np.empty((ta, tb))
    pred_arr = np.zeros((ta, tb), dtype=np.int8)
    cdef double[:, ::1] acc = acc_arr
    cdef signed char[:, ::1] pred = pred_arr
    cdef Py_ssize_t i, j
    cdef double best
    cdef signed char p
    with nogil:
        acc[0, 0] = cost[0, 0]
        for j in range(1, tb):
            acc[0, j] = acc[0, j - 1] + cost[0, j]
            pred[0, j] = 2
        for i in range(1, ta):
            acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
            pred[i, 0] = 1
            for j in range(1, tb):
                best = acc[i - 1, j - 1]
                p = 0
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                    p = 1
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                    p = 2
                acc[i, j] = cost[i, j] + best
                pred[i, j] = p
    path_arr = np.empty((ta + tb - 1, 2), dtype=np.int64)
    cdef long long[:, ::1] path = path_arr
    cdef Py_ssize_t n = 0
    i, j = ta - 1, tb - 1
    while True:
        path[n, 0] = i
        path[n, 1] = j
        n += 1
        if i == 0 and j == 0:
            break
        p = pred[i, j]
        if p == 0:
            i -= 1
            j -= 1
        elif p == 1:
            i -= 1
        else:
            j -= 1
    return acc_arr[ta - 1, tb - 1], path_arr[:n][::-1].copy()
