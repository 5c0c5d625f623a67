import threading
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import check_gradients, direct_conv, weighted_sum
from lifevit import tensor as T
from lifevit.tensor import GradientError, ShapeError, Tensor


# matmul / structure


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((a @ Tensor(np.eye(2))).data, a.data)


def test_matmul_hand_product():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=4), elements=st.floats(-10, 10)),
    st.integers(0, 2),
)
def test_concat_split_round_trip(arr, axis):
    axis = axis % arr.ndim
    x = np.concatenate([arr] * 3, axis=axis)
    parts = T.split(Tensor(x), 3, axis=axis)
    np.testing.assert_array_equal(T.concat(parts, axis=axis).data, x)


def test_split_uneven_sizes():
    parts = T.split(Tensor(np.arange(10.0)), [3, 7])
    assert [p.shape for p in parts] == [(3,), (7,)]
    with pytest.raises(ShapeError):
        T.split(Tensor(np.arange(10.0)), 3)


# convolutions


def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 4, 5, 5))
    w = np.eye(4).reshape(4, 4, 1, 1)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_hand_values():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), pad=1)
    np.testing.assert_array_equal(out.data[0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_zero_kernel_annihilates():
    x = np.random.default_rng(2).standard_normal((3, 6, 6))
    out = T.conv2d(Tensor(x), Tensor(np.zeros((5, 3, 3, 3))), Tensor(np.zeros(5)), pad=1)
    assert not out.data.any()


@pytest.mark.parametrize("k,pad,stride", [(1, 0, 1), (3, 1, 1), (3, 0, 2), (5, 2, 1), (2, 0, 1)])
def test_conv_matches_direct_sum(k, pad, stride):
    rng = np.random.default_rng(k * 10 + pad)
    x = rng.standard_normal((3, 7, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, direct_conv(x, w, b, pad, stride), rtol=1e-12, atol=1e-12)


def test_conv_errors():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_depthwise_identity_kernel():
    x = np.random.default_rng(3).standard_normal((2, 3, 5, 5))
    w = np.zeros((3, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(T.depthwise_conv2d(Tensor(x), Tensor(w), pad=1).data, x)


def test_depthwise_shift_left():
    x = np.arange(16.0).reshape(1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 2] = 1.0
    out = T.depthwise_conv2d(Tensor(x), Tensor(w), pad=1).data
    expected = np.zeros_like(x)
    expected[:, :, :-1] = x[:, :, 1:]
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("size", [4, 8, 24])
def test_depthwise_channel_separability(size):
    rng = np.random.default_rng(size)
    x = rng.standard_normal((4, size, size))
    w = rng.standard_normal((4, 1, 5, 5))
    base = T.depthwise_conv2d(Tensor(x), Tensor(w), pad=2).data
    x2 = x.copy()
    x2[0] += rng.standard_normal((size, size))
    moved = T.depthwise_conv2d(Tensor(x2), Tensor(w), pad=2).data
    np.testing.assert_array_equal(moved[1:], base[1:])
    assert not np.array_equal(moved[0], base[0])


@pytest.mark.parametrize("size,k", [(6, 3), (8, 5), (22, 3), (25, 5)])
def test_depthwise_matches_direct_sum(size, k):
    """Covers both the dense-operator path (small lattices) and the shift path."""
    rng = np.random.default_rng(size + k)
    x = rng.standard_normal((2, 3, size, size))
    w = rng.standard_normal((3, 1, k, k))
    b = rng.standard_normal(3)
    out = T.depthwise_conv2d(Tensor(x), Tensor(w), Tensor(b), pad=k // 2).data
    for n in range(2):
        for c in range(3):
            ref = direct_conv(x[n, c : c + 1], w[c : c + 1], b[c : c + 1], k // 2)
            np.testing.assert_allclose(out[n, c : c + 1], ref, rtol=1e-10, atol=1e-10)


def test_depthwise_paths_agree_in_value_and_gradient(monkeypatch):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((3, 1, 3, 3))
    b = rng.standard_normal(3)
    results = []
    for limit in (T.DENSE_DEPTHWISE_MAX_CELLS, 0):
        monkeypatch.setattr(T, "DENSE_DEPTHWISE_MAX_CELLS", limit)
        xt, wt, bt = (Tensor(a, requires_grad=True) for a in (x, w, b))
        out = T.depthwise_conv2d(xt, wt, bt, pad=1)
        weighted_sum(out).backward()
        results.append((out.data, xt.grad, wt.grad, bt.grad))
    for a, c in zip(*results):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)


def test_depthwise_separable_matches_composed_full_conv():
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.standard_normal((4, 6, 6))
        dw = rng.standard_normal((4, 1, 3, 3))
        pw = rng.standard_normal((5, 4, 1, 1))
        out = T.conv2d(T.depthwise_conv2d(Tensor(x), Tensor(dw), pad=1), Tensor(pw))
        full = pw[:, :, 0, 0][:, :, None, None] * dw[:, 0][None]  # Cout×Cin×3×3
        np.testing.assert_allclose(out.data, direct_conv(x, full, None, 1), atol=1e-6)


# normalization and activations


def test_softmax_constant_is_uniform():
    out = T.softmax(Tensor(np.full((2, 5), 3.7)), axis=-1)
    np.testing.assert_allclose(out.data, 0.2, rtol=1e-15)


@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_stochastic(x):
    out = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert (out > 0).all()


def test_layer_norm_hand_values():
    out = T.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-12)
    np.testing.assert_allclose(out.data, [-1.2247449, 0.0, 1.2247449], atol=1e-6)


@given(hnp.arrays(np.float64, (4, 7), elements=st.floats(-100, 100)))
def test_layer_norm_moments(x):
    x = x + np.linspace(0, 1, 7)  # keep every row non-constant
    out = T.layer_norm(Tensor(x), None, None, eps=1e-12, axis=-1).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ValueError):
        T.layer_norm(Tensor(np.ones(3)), None, None, eps=0.0)


def test_gelu_zero_and_tails():
    out = T.gelu(Tensor([0.0, 10.0, -10.0])).data
    assert out[0] == 0.0
    np.testing.assert_allclose(out[1:], [10.0, 0.0], atol=1e-12)


def test_gelu_float32_stays_float32():
    assert T.gelu(Tensor(np.ones(4, dtype=np.float32))).dtype == np.float32


def test_cross_entropy_uniform_logits():
    loss = T.cross_entropy(Tensor(np.zeros((4, 10))), [0, 1, 2, 3])
    assert abs(loss.item() - np.log(10)) < 1e-12


def test_dropout_scaling_and_inference_identity():
    x = Tensor(np.ones((200, 50)))
    assert T.dropout(x, 0.5, None) is x
    out = T.dropout(x, 0.5, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05


# autograd


def test_grad_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_grad_of_square_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_gradients_accumulate():
    x = Tensor([1.0, 2.0], requires_grad=True)
    x.sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_backward_errors():
    with pytest.raises(GradientError):
        Tensor([1.0]).backward()
    with pytest.raises(GradientError):
        (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()


def test_no_grad_is_thread_local():
    x = Tensor([1.0], requires_grad=True)
    seen = {}

    def worker():
        seen["tracked"] = (x * 2.0).requires_grad

    with T.no_grad():
        assert not (x * 2.0).requires_grad
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen["tracked"]
    assert (x * 2.0).requires_grad


# finite-difference suite: every differentiable op at float64

FD_SEEDS = 20

GRAD_CASES = {
    "add_broadcast": ([(3, 4), (4,)], lambda a, b: weighted_sum(a + b)),
    "sub_broadcast": ([(2, 3, 1), (3, 5)], lambda a, b: weighted_sum(a - b)),
    "mul_broadcast": ([(3, 4), (3, 1)], lambda a, b: weighted_sum(a * b)),
    "matmul": ([(3, 4), (4, 2)], lambda a, b: weighted_sum(a @ b)),
    "matmul_batched": ([(2, 3, 4), (4, 5)], lambda a, b: weighted_sum(a @ b)),
    "reshape_permute": ([(2, 3, 4)], lambda a: weighted_sum(a.reshape(4, 6).reshape(2, 12).reshape(2, 3, 4).permute(2, 0, 1))),
    "transpose": ([(2, 3, 4)], lambda a: weighted_sum(T.transpose(a))),
    "concat_split": ([(2, 3), (2, 2)], lambda a, b: weighted_sum(T.split(T.concat([a, b], axis=1), [1, 4], axis=1)[1])),
    "sum_axis": ([(3, 4)], lambda a: weighted_sum(a.sum(axis=0, keepdims=True))),
    "mean_axis": ([(3, 4)], lambda a: weighted_sum(a.mean(axis=1))),
    "softmax": ([(3, 5)], lambda a: weighted_sum(T.softmax(a, axis=-1))),
    "softmax_axis0": ([(4, 3)], lambda a: weighted_sum(T.softmax(a, axis=0))),
    "layer_norm": ([(3, 6), (6,), (6,)], lambda a, g, b: weighted_sum(T.layer_norm(a, g, b, 1e-6))),
    "layer_norm_channels": ([(2, 5, 3), (5, 1), (5, 1)], lambda a, g, b: weighted_sum(T.layer_norm(a, g, b, 1e-6, axis=-2))),
    "gelu": ([(4, 5)], lambda a: weighted_sum(T.gelu(a))),
    "cross_entropy": ([(4, 6)], lambda a: T.cross_entropy(a, [0, 5, 2, 2])),
    "conv2d_k3": ([(2, 3, 5, 5), (4, 3, 3, 3), (4,)], lambda x, w, b: weighted_sum(T.conv2d(x, w, b, pad=1))),
    "conv2d_stride": ([(1, 2, 6, 6), (3, 2, 2, 2), (3,)], lambda x, w, b: weighted_sum(T.conv2d(x, w, b, stride=2))),
    "conv2d_k1": ([(2, 4, 3, 3), (5, 4, 1, 1), (5,)], lambda x, w, b: weighted_sum(T.conv2d(x, w, b))),
    "depthwise_k3": ([(2, 3, 5, 5), (3, 1, 3, 3), (3,)], lambda x, w, b: weighted_sum(T.depthwise_conv2d(x, w, b, pad=1))),
    "depthwise_k5_large": ([(1, 2, 21, 21), (2, 1, 5, 5), (2,)], lambda x, w, b: weighted_sum(T.depthwise_conv2d(x, w, b, pad=2))),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_finite_difference(name):
    shapes, build = GRAD_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(FD_SEEDS):
        arrays = [rng.standard_normal(s) for s in shapes]
        check_gradients(build, arrays)


def test_dtype_mismatch_float32_stays_float32():
    out = Tensor(np.ones((2, 2), dtype=np.float32)) * 0.5
    assert out.dtype == np.float32
