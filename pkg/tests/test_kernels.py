"""Backend parity: the compiled core must reproduce the numpy reference."""

import numpy as np
import pytest

from prosotts.kernels import pure

_core = pytest.importorskip("prosotts.kernels._core")

RNG = np.random.default_rng(99)


def c(a):
    return np.ascontiguousarray(a)


@pytest.mark.parametrize("t_len,cin,cout,k,dil", [
    (9, 3, 4, 3, 1), (9, 3, 4, 5, 2), (1, 2, 2, 3, 1), (40, 8, 8, 5, 1),
])
def test_conv1d_parity(t_len, cin, cout, k, dil):
    x = RNG.normal(size=(t_len, cin))
    w = RNG.normal(size=(k, cin, cout))
    b = RNG.normal(size=cout)
    g = RNG.normal(size=(t_len, cout))
    np.testing.assert_allclose(_core.conv1d_fwd(c(x), c(w), b, dil),
                               pure.conv1d_fwd(x, w, b, dil), rtol=1e-12)
    for got, want in zip(_core.conv1d_bwd(c(x), c(w), c(g), dil),
                         pure.conv1d_bwd(x, w, g, dil)):
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("t_len,cin,cout,k,stride", [
    (5, 3, 2, 8, 4), (7, 4, 4, 4, 2), (3, 2, 1, 6, 4),
])
def test_convt1d_parity(t_len, cin, cout, k, stride):
    x = RNG.normal(size=(t_len, cin))
    w = RNG.normal(size=(k, cin, cout))
    b = RNG.normal(size=cout)
    g = RNG.normal(size=(t_len * stride, cout))
    np.testing.assert_allclose(_core.convt1d_fwd(c(x), c(w), b, stride),
                               pure.convt1d_fwd(x, w, b, stride), rtol=1e-12)
    for got, want in zip(_core.convt1d_bwd(c(x), c(w), c(g), stride),
                         pure.convt1d_bwd(x, w, g, stride)):
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_forward_sum_parity():
    for trial in range(20):
        t_len = int(RNG.integers(1, 9))
        n_len = int(RNG.integers(1, t_len + 1))
        logv = np.log(RNG.dirichlet(np.ones(n_len), size=t_len))
        nll_c, post_c = _core.forward_sum_fb(c(logv))
        nll_p, post_p = pure.forward_sum_fb(logv)
        assert abs(nll_c - nll_p) < 1e-12
        np.testing.assert_allclose(post_c, post_p, atol=1e-12)


def test_viterbi_parity():
    for trial in range(50):
        t_len = int(RNG.integers(1, 10))
        n_len = int(RNG.integers(1, t_len + 1))
        logv = np.log(RNG.dirichlet(np.ones(n_len), size=t_len))
        assert (_core.viterbi_path(c(logv)) == pure.viterbi_path(logv)).all()


def test_viterbi_tie_break_parity():
    logv = np.log(np.full((4, 2), 0.5))  # everything tied
    assert (_core.viterbi_path(c(logv)) == pure.viterbi_path(logv)).all()


def test_dtw_parity_including_ties():
    for trial in range(30):
        ta = int(RNG.integers(1, 8))
        tb = int(RNG.integers(1, 8))
        cost = RNG.random((ta, tb))
        tc, pc = _core.dtw_accum(c(cost))
        tp, pp = pure.dtw_accum(cost)
        assert abs(tc - tp) < 1e-12
        np.testing.assert_array_equal(pc, pp)
    ties = np.ones((5, 5))
    tc, pc = _core.dtw_accum(c(ties))
    tp, pp = pure.dtw_accum(ties)
    np.testing.assert_array_equal(pc, pp)
