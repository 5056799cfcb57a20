"""Pure-numpy reference implementations of the hot kernels.

Every function here has a signature-identical twin in the compiled
`_core` extension; the dispatcher in `__init__` picks one at import
time. Keep both backends bit-compatible: same operation order, same
tie-breaking.

Shapes: sequences are time-major, `x[(T, C)]`; conv weights are
`w[(K, C_in, C_out)]` with odd K and "same" zero padding.
"""

import numpy as np

NAME = "pure"


def conv1d_fwd(x, w, bias, dilation):
    """Dilated same-padding 1-D convolution, x (T,Cin) -> (T,Cout)."""
    t_len, cin = x.shape
    k_size = w.shape[0]
    reach = (k_size - 1) // 2 * dilation
    xp = np.zeros((t_len + 2 * reach, cin))
    xp[reach:reach + t_len] = x
    y = np.zeros((t_len, w.shape[2]))
    for k in range(k_size):
        off = k * dilation
        y += xp[off:off + t_len] @ w[k]
    if bias is not None:
        y += bias
    return y


def conv1d_bwd(x, w, g, dilation):
    """Gradients of conv1d_fwd: returns (gx, gw, gb)."""
    t_len, cin = x.shape
    k_size = w.shape[0]
    reach = (k_size - 1) // 2 * dilation
    xp = np.zeros((t_len + 2 * reach, cin))
    xp[reach:reach + t_len] = x
    gp = np.zeros((t_len + 2 * reach, w.shape[2]))
    gp[reach:reach + t_len] = g
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for k in range(k_size):
        off = k * dilation
        # correlation with the flipped kernel gives the input gradient
        gx += gp[off:off + t_len] @ w[k_size - 1 - k].T
        gw[k] = xp[off:off + t_len].T @ g
    gb = g.sum(axis=0)
    return gx, gw, gb


def convt1d_fwd(x, w, bias, stride):
    """Transposed 1-D convolution upsampling T -> T*stride."""
    t_len = x.shape[0]
    k_size, _, cout = w.shape
    full = np.zeros(((t_len - 1) * stride + k_size, cout))
    last = (t_len - 1) * stride + 1
    for k in range(k_size):
        full[k:k + last:stride] += x @ w[k]
    off = (k_size - stride) // 2
    y = full[off:off + t_len * stride]
    if bias is not None:
        y = y + bias
    return y.copy()


def convt1d_bwd(x, w, g, stride):
    """Gradients of convt1d_fwd: returns (gx, gw, gb)."""
    t_len = x.shape[0]
    k_size, _, cout = w.shape
    off = (k_size - stride) // 2
    gfull = np.zeros(((t_len - 1) * stride + k_size, cout))
    gfull[off:off + t_len * stride] = g
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    last = (t_len - 1) * stride + 1
    for k in range(k_size):
        rows = gfull[k:k + last:stride]
        gx += rows @ w[k].T
        gw[k] = x.T @ rows
    gb = g.sum(axis=0)
    return gx, gw, gb


def forward_sum_fb(logv):
    """Log-likelihood of all monotonic paths plus cell posteriors.

    Paths start at column 0, end at column N-1, and advance the column
    by 0 or 1 per row. Returns (nll, posterior) where posterior[t, n]
    is the probability that a path visits cell (t, n); it is also
    d(loglik)/d(logv[t, n]).
    """
    t_len, n_len = logv.shape
    neg = -np.inf
    alpha = np.full((t_len, n_len), neg)
    alpha[0, 0] = logv[0, 0]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        shifted = np.concatenate(([neg], prev[:-1]))
        alpha[t] = logv[t] + np.logaddexp(prev, shifted)
    total = alpha[-1, -1]
    beta = np.full((t_len, n_len), neg)
    beta[-1, -1] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + logv[t + 1]
        shifted = np.concatenate((nxt[1:], [neg]))
        beta[t] = np.logaddexp(nxt, shifted)
    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - total)
    post[~np.isfinite(post)] = 0.0
    return -total, post


def viterbi_path(logv):
    """Most probable monotonic path; returns per-row column indices.

    Ties between staying and advancing are broken toward staying.
    """
    t_len, n_len = logv.shape
    q = np.full(n_len, -np.inf)
    q[0] = logv[0, 0]
    advance = np.zeros((t_len, n_len), dtype=np.int8)
    for t in range(1, t_len):
        shifted = np.concatenate(([-np.inf], q[:-1]))
        take = shifted > q
        advance[t] = take
        q = logv[t] + np.where(take, shifted, q)
    cols = np.zeros(t_len, dtype=np.int64)
    n = n_len - 1
    for t in range(t_len - 1, 0, -1):
        cols[t] = n
        if advance[t, n]:
            n -= 1
    cols[0] = n
    return cols


def dtw_accum(cost):
    """DTW over steps {(1,0),(0,1),(1,1)}; returns (total, path).

    Path backtracking prefers the diagonal step, then (1,0), for
    deterministic output under ties.
    """
    ta, tb = cost.shape
    acc = np.empty((ta, tb))
    pred = np.zeros((ta, tb), dtype=np.int8)  # 0 diag, 1 up, 2 left
    acc[0, 0] = cost[0, 0]
    for j in range(1, tb):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        pred[0, j] = 2
    for i in range(1, ta):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        pred[i, 0] = 1
        row = acc[i]
        up = acc[i - 1]
        for j in range(1, tb):
            best = up[j - 1]
            p = 0
            if up[j] < best:
                best = up[j]
                p = 1
            if row[j - 1] < best:
                best = row[j - 1]
                p = 2
            row[j] = cost[i, j] + best
            pred[i, j] = p
    path = []
    i, j = ta - 1, tb - 1
    while True:
        path.append((i, j))
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
    path.reverse()
    return acc[-1, -1], np.array(path, dtype=np.int64)
