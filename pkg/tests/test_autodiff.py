import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amgen.autodiff import (
    Adam,
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    adam_step,
    backward,
    concat,
    conv2d,
    conv3d,
    embedding,
    expand,
    group_norm,
    matmul,
    mse_loss,
    mul,
    permute,
    precision,
    reshape,
    silu,
    softmax,
    sum_,
    take,
)
from amgen.autodiff.gradcheck import gradient_errors
from amgen.autodiff.io import (
    FormatError,
    decode_tensor,
    encode_tensor,
    load_archive,
    save_archive,
)


def param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_left():
    b = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), b).data, b.data)


def test_matmul_identity_right():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(a, Tensor(np.eye(2))).data, a.data)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_finite_difference():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        a, b = param(rng, 3, 4), param(rng, 4, 2)
        errs = gradient_errors(lambda: sum_(matmul(a, b)), [a, b])
    assert max(errs) < 1e-3


def test_matmul_backward_formula():
    rng = np.random.default_rng(1)
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    w = rng.standard_normal((3, 2)).astype(np.float32)
    backward(sum_(mul(matmul(a, b), Tensor(w))))
    np.testing.assert_allclose(a.grad, w @ b.data.T, rtol=1e-5)
    np.testing.assert_allclose(b.grad, a.data.T @ w, rtol=1e-5)


def test_batched_matmul_gradient():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
        errs = gradient_errors(lambda: sum_(mul(matmul(a, b), matmul(a, b))), [a, b])
    assert max(errs) < 1e-3


# -- conv3d -----------------------------------------------------------------

def test_conv3d_unit_kernel_is_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((3, 1, 5, 6)))
    y = conv3d(x, Tensor(np.ones((1, 1, 1, 1, 1))))
    assert np.array_equal(y.data, x.data)


def test_conv3d_zero_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    y = conv3d(x, Tensor(np.zeros((5, 3, 3, 3, 3))))
    assert y.shape == (2, 5, 4, 4)
    assert not y.data.any()


def test_conv3d_matches_direct_loops():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 2, 4, 5))
    k = rng.standard_normal((2, 2, 3, 3, 3))
    with precision(np.float64):
        y = conv3d(Tensor(x), Tensor(k)).data
    xp = np.pad(x, ((1, 1), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 2, 4, 5))
    for f in range(3):
        for o in range(2):
            for i in range(4):
                for j in range(5):
                    ref[f, o, i, j] = np.sum(xp[f:f + 3, :, i:i + 3, j:j + 3].transpose(1, 0, 2, 3) * k[o])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv3d_finite_difference():
    rng = np.random.default_rng(4)
    with precision(np.float64):
        x, k, b = param(rng, 4, 2, 8, 8), param(rng, 3, 2, 3, 3, 3, scale=0.3), param(rng, 3)
        w = Tensor(rng.standard_normal((4, 3, 8, 8)))
        errs = gradient_errors(lambda: sum_(mul(conv3d(x, k, b), w)), [x, k, b], max_entries=60)
    assert max(errs) < 1e-3


def test_conv3d_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        conv3d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 1, 5, 5))), padding=0)


def test_conv3d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv3d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 1, 1, 1))))


def test_conv2d_is_per_frame():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((3, 2, 6, 6)))
    k = Tensor(rng.standard_normal((4, 2, 3, 3)))
    y = conv2d(x, k)
    single = conv2d(Tensor(x.data[1:2]), k)
    np.testing.assert_allclose(y.data[1:2], single.data, rtol=1e-6)


# -- group norm -------------------------------------------------------------

def test_group_norm_constant_input_is_zero():
    x = Tensor(np.full((2, 4, 3, 3), 7.0))
    y = group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.abs(y.data).max() == 0.0


def test_group_norm_single_group_is_layer_norm():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 6, 3, 3))
    y = group_norm(Tensor(x), 1).data
    ref = (x - x.mean()) / np.sqrt(x.var() + 1e-5)
    np.testing.assert_allclose(y, ref, atol=1e-5)


def test_group_norm_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((3, 8, 5, 5)) * 4 + 2)
    y = group_norm(x, 4).data.astype(np.float64).reshape(3, 4, 2, 25)
    means = y.mean(axis=(0, 2, 3))
    var = y.var(axis=(0, 2, 3))
    assert np.abs(means).max() < 1e-5
    assert np.abs(var - 1).max() < 1e-3


def test_group_norm_indivisible():
    with pytest.raises(DimensionError):
        group_norm(Tensor(np.ones((1, 6, 2, 2))), 4)


def test_group_norm_finite_difference():
    rng = np.random.default_rng(6)
    with precision(np.float64):
        x, w, b = param(rng, 2, 4, 3, 3), param(rng, 4), param(rng, 4)
        r = Tensor(rng.standard_normal((2, 4, 3, 3)))
        errs = gradient_errors(lambda: sum_(mul(group_norm(x, 2, w, b), r)), [x, w, b])
    assert max(errs) < 1e-3


# -- remaining ops ----------------------------------------------------------

@pytest.mark.parametrize("name", ["silu", "softmax", "reshape", "permute", "expand", "concat", "take", "embedding"])
def test_small_op_gradients(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    with precision(np.float64):
        x = param(rng, 3, 4)
        y = param(rng, 3, 2)
        r = Tensor(rng.standard_normal(24))
        fns = {
            "silu": lambda: silu(x),
            "softmax": lambda: softmax(x, axis=1),
            "reshape": lambda: reshape(x, (2, 6)),
            "permute": lambda: permute(x, (1, 0)),
            "expand": lambda: expand(take(x, 0, 1, axis=0), (5, 4)),
            "concat": lambda: concat([x, y], axis=1),
            "take": lambda: take(x, 1, 3, axis=1),
            "embedding": lambda: embedding(x, [2, 0, 2, 1]),
        }

        def loss():
            out = fns[name]()
            flat = reshape(out, (out.size,))
            return sum_(mul(mul(flat, flat), Tensor(r.data[: out.size])))

        errs = gradient_errors(loss, [x, y] if name == "concat" else [x])
    assert max(errs) < 1e-3


def test_scalar_broadcast_only():
    a = Tensor(np.ones((2, 3)))
    assert (a * 2.0).data.sum() == 12.0
    with pytest.raises(DimensionError):
        a + Tensor(np.ones(3))


def test_nonfinite_is_error():
    with pytest.raises(NumericError):
        Tensor(np.ones(2)) * float("inf")
    with pytest.raises(NumericError):
        Tensor([np.nan])


# -- backward ---------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(sum_(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, -2.0, 3.5], requires_grad=True)
    backward(sum_(mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(mul(x, x))


def test_backward_reused_node_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = mul(x, x)
    backward(sum_(mul(y, y)))  # x^4
    np.testing.assert_allclose(x.grad, [4 * 27.0])


def test_composite_conv_norm_matmul_mse():
    rng = np.random.default_rng(7)
    with precision(np.float64):
        x = param(rng, 2, 3, 4, 4)
        k = param(rng, 4, 3, 3, 3, 3, scale=0.3)
        gw, gb = param(rng, 4), param(rng, 4)
        w = param(rng, 4, 5)
        target = Tensor(rng.standard_normal((32, 5)))

        def loss():
            h = silu(group_norm(conv3d(x, k), 2, gw, gb))
            h = reshape(permute(h, (0, 2, 3, 1)), (32, 4))
            return mse_loss(matmul(h, w), target)

        errs = gradient_errors(loss, [x, k, gw, gb, w], max_entries=40)
    assert max(errs) < 1e-3


def test_ops_are_deterministic():
    rng = np.random.default_rng(8)
    xd, kd = rng.standard_normal((4, 3, 8, 8)), rng.standard_normal((5, 3, 3, 3, 3))
    outs = []
    for _ in range(2):
        x, k = Tensor(xd, requires_grad=True), Tensor(kd, requires_grad=True)
        y = group_norm(conv3d(x, k), 5)
        backward(sum_(mul(y, y)))
        outs.append((y.data.tobytes(), x.grad.tobytes(), k.grad.tobytes()))
    assert outs[0] == outs[1]


# -- adam -------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0], dtype=np.float32)
    m, v = [np.zeros(2)], [np.zeros(2)]
    adam_step([p], [np.zeros(2, dtype=np.float32)], m, v, 1, lr=0.1)
    assert np.array_equal(p, [1.0, -2.0])


def test_adam_constant_gradient_moves_against_sign():
    p = Tensor([0.0, 0.0], requires_grad=True)
    opt = Adam([p], lr=0.01)
    for _ in range(50):
        p.grad = np.array([2.5, -0.1], dtype=np.float32)
        opt.step()
    assert p.data[0] < 0 < p.data[1]


def test_adam_first_step_is_lr_times_sign():
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    g, lr, eps = 0.37, 0.05, 1e-8
    p = np.zeros(1, dtype=np.float64)
    adam_step([p], [np.array([g])], [np.zeros(1)], [np.zeros(1)], 1, lr=lr, eps=eps)
    assert p[0] == pytest.approx(-lr * g / (g + eps), rel=1e-12)
    assert p[0] == pytest.approx(-lr, rel=1e-6)


# -- AMGT format ------------------------------------------------------------

def test_amgt_layout():
    blob = encode_tensor(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert blob[:4] == b"AMGT"
    assert struct.unpack("<III", blob[4:16]) == (1, 2, 1)
    assert struct.unpack("<I", blob[16:20]) == (3,)
    assert np.frombuffer(blob[20:], "<f4").tolist() == [1.0, 2.0, 3.0]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.integers(0, 2**31 - 1))
def test_amgt_roundtrip(shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    assert np.array_equal(decode_tensor(encode_tensor(arr)), arr)


def test_amgt_bad_magic():
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + b"\0" * 12)


def test_archive_roundtrip(tmp_path):
    tensors = {"a.weight": np.ones((2, 3), np.float32), "b": np.arange(4, dtype=np.float32)}
    digest = save_archive(tmp_path / "ck.amgc", tensors)
    back = load_archive(tmp_path / "ck.amgc")
    assert list(back) == ["a.weight", "b"]
    assert all(np.array_equal(back[k], tensors[k]) for k in tensors)
    assert len(digest) == 64
