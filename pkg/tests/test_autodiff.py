import numpy as np
import pytest

from prosotts import autodiff as ad
from oracles import central_diff_grad, forward_sum_by_enumeration


def rand(shape, seed=0, scale=1.0):
    return ad.Tensor(np.random.default_rng(seed).normal(scale=scale, size=shape),
                     requires_grad=True)


def test_stop_gradient_blocks_flow():
    x = rand((4,))
    y = ad.sum(ad.square(ad.stop_gradient(x)))
    assert not y.requires_grad
    z = ad.sum(ad.mul(x, ad.stop_gradient(ad.square(x))))
    ad.backward(z)
    # d/dx of x*c with c treated constant
    np.testing.assert_allclose(x.grad, x.data ** 2)


def test_conv1d_same_padding_preserves_length():
    x = rand((5, 2))
    w = rand((3, 2, 3), seed=1)
    y = ad.conv1d(x, w, dilation=1)
    assert y.shape == (5, 3)


def test_conv1d_even_kernel_rejected():
    with pytest.raises(ad.AutodiffError):
        ad.conv1d(rand((5, 2)), rand((4, 2, 3)))


def test_softmax_uniform_on_constant_rows():
    y = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]), axis=-1)
    np.testing.assert_allclose(y.data, [1 / 3, 1 / 3, 1 / 3])


def test_backward_sum_gives_ones():
    x = rand((3, 4))
    ad.backward(ad.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_mean_square_closed_form():
    x = rand((6,))
    ad.backward(ad.mean(ad.square(x)))
    np.testing.assert_allclose(x.grad, 2 * x.data / 6)


def test_composed_graph_matches_independent_fd():
    # independent oracle loop, not grad_check
    x = rand((3, 4), seed=3)
    w = rand((4, 2), seed=4)

    def forward():
        h = ad.leaky_relu(ad.matmul(x, w))
        return ad.mean(ad.square(ad.layer_norm(h, axis=-1)))

    ad.backward(forward())
    analytic = x.grad.copy()

    def f(arr):
        with ad.no_grad():
            return forward().item()

    numeric = central_diff_grad(f, x.data)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    assert rel.max() < 1e-4


def test_grad_check_exact_for_linear():
    x = rand((5,), seed=5)
    assert ad.grad_check(lambda t: ad.sum(t), x) < 1e-10


def test_grad_check_l1_away_from_kinks():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 3))
    b = a + rng.choice([-1.0, 1.0], size=(4, 3)) * rng.uniform(0.5, 1.5, size=(4, 3))
    x = ad.Tensor(a, requires_grad=True)
    target = ad.Tensor(b)
    assert ad.grad_check(lambda t: ad.mean(ad.abs_(ad.sub(t, target))), x) < 1e-4


PRIMITIVE_CASES = [
    ("add", lambda x, y: ad.add(x, y), 2),
    ("sub", lambda x, y: ad.sub(x, y), 2),
    ("mul", lambda x, y: ad.mul(x, y), 2),
    ("matmul", lambda x, y: ad.matmul(x, ad.transpose(y)), 2),
    ("leaky_relu", lambda x: ad.leaky_relu(x, 0.1), 1),
    ("softmax", lambda x: ad.softmax(x, axis=-1), 1),
    ("log_softmax", lambda x: ad.log_softmax(x, axis=-1), 1),
    ("layer_norm", lambda x: ad.layer_norm(x, axis=-1), 1),
    ("square", lambda x: ad.square(x), 1),
    ("exp", lambda x: ad.exp(x), 1),
    ("concat0", lambda x, y: ad.concat([x, y], axis=0), 2),
    ("concat1", lambda x, y: ad.concat([x, y], axis=1), 2),
    ("reshape", lambda x: ad.reshape(x, (12,)), 1),
    ("gather", lambda x: ad.gather(x, [2, 0, 2, 1]), 1),
]


@pytest.mark.parametrize("name,fn,arity", PRIMITIVE_CASES)
def test_primitive_gradients_match_fd(name, fn, arity):
    x = rand((3, 4), seed=10)
    if arity == 2:
        y = rand((3, 4), seed=11)
        for checked in (x, y):
            err = ad.grad_check(lambda t: ad.sum(ad.square(fn(x, y))), checked)
            assert err < 1e-4, f"{name}: {err}"
    else:
        err = ad.grad_check(lambda t: ad.sum(ad.square(fn(x))), x)
        assert err < 1e-4, f"{name}: {err}"


def test_log_and_mean_axis_gradients():
    x = ad.Tensor(np.random.default_rng(12).uniform(0.5, 2.0, size=(3, 4)),
                  requires_grad=True)
    assert ad.grad_check(lambda t: ad.sum(ad.log(t)), x) < 1e-4
    assert ad.grad_check(lambda t: ad.sum(ad.square(ad.mean(t, axis=0))), x) < 1e-4
    assert ad.grad_check(lambda t: ad.sum(ad.square(ad.sum(t, axis=1, keepdims=True))), x) < 1e-4


def test_broadcast_add_and_mul_gradients():
    x = rand((3, 4), seed=13)
    col = rand((3, 1), seed=14)
    row = rand((1, 4), seed=15)
    scalar = rand((), seed=16)
    for t in (x, col, row, scalar):
        err = ad.grad_check(
            lambda _: ad.sum(ad.square(ad.add(ad.mul(x, scalar), ad.add(col, row)))), t)
        assert err < 1e-4


def test_conv1d_gradients_match_fd():
    x = rand((7, 3), seed=20)
    w = rand((5, 3, 2), seed=21, scale=0.5)
    b = rand((2,), seed=22)
    for d in (1, 2):
        for t in (x, w, b):
            err = ad.grad_check(lambda _: ad.sum(ad.square(ad.conv1d(x, w, b, dilation=d))), t)
            assert err < 1e-4


def test_conv_transpose_gradients_and_length():
    x = rand((5, 3), seed=23)
    w = rand((8, 3, 2), seed=24, scale=0.5)
    b = rand((2,), seed=25)
    y = ad.conv_transpose1d(x, w, b, stride=4)
    assert y.shape == (20, 2)
    for t in (x, w, b):
        err = ad.grad_check(lambda _: ad.sum(ad.square(ad.conv_transpose1d(x, w, b, stride=4))), t)
        assert err < 1e-4


def test_stft_magnitude_matches_rfft_and_fd():
    rng = np.random.default_rng(26)
    wave = rng.normal(size=40)
    x = ad.Tensor(wave, requires_grad=True)
    m = ad.stft_magnitude(x, n_fft=16, win_length=16, hop=8)
    assert m.shape == ((40 - 16) // 8 + 1, 9)
    # forward agrees with a straight rfft of the windowed frames
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(16) / 16)
    frame0 = wave[:16] * win
    np.testing.assert_allclose(m.data[0], np.abs(np.fft.rfft(frame0, 16)), atol=1e-9)
    err = ad.grad_check(
        lambda _: ad.mean(ad.abs_(ad.stft_magnitude(x, 16, 16, 8))), x)
    assert err < 1e-4


def test_monotonic_forward_sum_value_and_gradient():
    rng = np.random.default_rng(27)
    v = rng.dirichlet(np.ones(3), size=6)
    nll = ad.monotonic_forward_sum(ad.Tensor(np.log(v)))
    assert abs(nll.item() - forward_sum_by_enumeration(v)) < 1e-9
    lp = ad.Tensor(np.log(v), requires_grad=True)
    err = ad.grad_check(lambda t: ad.monotonic_forward_sum(t), lp)
    assert err < 1e-4


def test_monotonic_forward_sum_rejects_short_frames():
    with pytest.raises(ad.AutodiffError):
        ad.monotonic_forward_sum(ad.Tensor(np.zeros((2, 4))))


def test_forward_deterministic():
    x = rand((6, 5), seed=30)
    w = rand((5, 5), seed=31)

    def forward():
        return ad.softmax(ad.matmul(ad.layer_norm(x, axis=-1), w), axis=-1).data

    a, b = forward(), forward()
    assert (a == b).all()


def test_second_backward_requires_reset():
    x = rand((4,), seed=32)
    loss = ad.sum(ad.square(x))
    ad.backward(loss)
    with pytest.raises(ad.GradStateError):
        ad.backward(ad.sum(ad.square(x)))
    ad.backward(ad.sum(ad.square(x)), accumulate=True)
    np.testing.assert_allclose(x.grad, 4 * x.data)
    ad.backward(ad.sum(ad.square(x)), reset=True)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_rejects_non_scalar_and_empty_graph():
    x = rand((3,), seed=33)
    with pytest.raises(ad.AutodiffError):
        ad.backward(ad.square(x))
    with pytest.raises(ad.AutodiffError):
        ad.backward(ad.Tensor(1.0, requires_grad=True))


def test_shape_mismatch_names_primitive_and_shapes():
    with pytest.raises(ad.ShapeMismatch) as e:
        ad.matmul(rand((2, 3)), rand((2, 3)))
    assert e.value.op == "matmul"
    assert e.value.shape_a == (2, 3) and e.value.shape_b == (2, 3)
    with pytest.raises(ad.ShapeMismatch):
        ad.add(rand((2, 3)), rand((4,)))


def test_non_finite_output_names_primitive():
    with pytest.raises(ad.NonFiniteError) as e:
        ad.log(ad.Tensor([-1.0]))
    assert e.value.op == "log"
    with pytest.raises(ad.NonFiniteError) as e:
        ad.exp(ad.Tensor([1e9]))
    assert e.value.op == "exp"


def test_graph_nodes_topological_order():
    x = rand((3,), seed=34)
    y = ad.square(x)
    z = ad.sum(ad.mul(y, y))
    order = ad.graph_nodes(z)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node.parents:
            assert pos[id(p)] < pos[id(node)]
    assert order[-1] is z


def test_backward_visits_each_primitive_once():
    x = rand((3,), seed=35)
    y = ad.square(x)
    calls = []
    orig = y._vjp
    y._vjp = lambda g: calls.append(1) or orig(g)
    z = ad.sum(ad.add(y, y))
    ad.backward(z)
    assert len(calls) == 1
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_no_grad_suppresses_recording():
    x = rand((3,), seed=36)
    with ad.no_grad():
        y = ad.sum(ad.square(x))
    assert not y.requires_grad and y.parents == ()
