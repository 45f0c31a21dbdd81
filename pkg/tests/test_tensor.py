import numpy as np
import pytest

from mapfusion.errors import ContractError
from mapfusion.tensor import (AdamState, adam_step, bce_loss, concat_channels, conv2d, conv2d_backward,
                              conv2d_multi, conv2d_multi_backward, dense, grad_check, pool3,
                              pool3_backward, relu, sigmoid, softmax, split_backward, tensor)


def loop_conv(x, k, b):
    # nested-loop cross-correlation with zero "same" padding
    n, c, h, w = x.shape
    o, _, kh, _ = k.shape
    p = kh // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, h, w))
    for i in range(n):
        for oc in range(o):
            for y in range(h):
                for xx in range(w):
                    out[i, oc, y, xx] = np.sum(xp[i, :, y:y + kh, xx:xx + kh] * k[oc]) + b[oc]
    return out


def loop_pool(x, mode):
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    win = [x[i, ch, yy, xq] for yy in range(y - 1, y + 2) for xq in range(xx - 1, xx + 2)
                           if 0 <= yy < h and 0 <= xq < w]
                    out[i, ch, y, xx] = max(win) if mode == "max" else sum(win) / 9.0
    return out


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_conv_matches_loop_oracle(rng, k):
    x = rng.standard_normal((2, 3, 6, 7))
    kern = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    expect = loop_conv(x, kern, b)
    np.testing.assert_allclose(conv2d(x, kern, b), expect, atol=1e-10)
    np.testing.assert_allclose(conv2d_multi(x, [kern], [b]), expect, atol=1e-10)


def test_conv_bank_equals_stacked_direct(rng):
    x = rng.standard_normal((2, 5, 12, 9)).astype(np.float32)
    kernels = [rng.standard_normal((5, 5, k, k)).astype(np.float32) for k in (1, 3, 5, 7)]
    biases = [rng.standard_normal(5).astype(np.float32) for _ in kernels]
    bank = conv2d_multi(x, kernels, biases)
    direct = np.concatenate([conv2d(x, k, b) for k, b in zip(kernels, biases)], axis=1)
    assert bank.dtype == np.float32
    np.testing.assert_allclose(bank, direct, atol=2e-4)

    g = rng.standard_normal(bank.shape).astype(np.float32)
    gi, gks, gbs = conv2d_multi_backward(x, kernels, g)
    gi_ref = 0
    for i, k in enumerate(kernels):
        dx, dk, db = conv2d_backward(x, k, g[:, 5 * i:5 * i + 5])
        gi_ref = gi_ref + dx
        np.testing.assert_allclose(gks[i], dk, rtol=1e-3, atol=1e-3)
        np.testing.assert_allclose(gbs[i], db, rtol=1e-4, atol=1e-3)
    np.testing.assert_allclose(gi, gi_ref, atol=1e-3)


def test_identity_kernel_and_zero_bias():
    x = np.arange(32, dtype=np.float32).reshape(1, 2, 4, 4)
    k = np.zeros((2, 2, 3, 3), np.float32)
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1
    np.testing.assert_array_equal(conv2d(x, k), x)


def test_conv_shape_errors(rng):
    with pytest.raises(ContractError):
        conv2d(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 2, 3, 3)))
    with pytest.raises(ContractError):
        conv2d(rng.standard_normal((3, 4, 4)), rng.standard_normal((2, 3, 3, 3)))
    with pytest.raises(ContractError):
        conv2d_multi(rng.standard_normal((1, 3, 4, 4)), [rng.standard_normal((2, 3, 2, 2))])


@pytest.mark.parametrize("mode", ["avg", "max"])
def test_pool_matches_loop_oracle(rng, mode):
    x = rng.standard_normal((2, 2, 5, 6))
    np.testing.assert_allclose(pool3(x, mode), loop_pool(x, mode), atol=1e-12)


def test_max_pool_tie_routes_to_first_occurrence():
    x = np.ones((1, 1, 3, 3))
    g = np.zeros((1, 1, 3, 3))
    g[0, 0, 1, 1] = 1.0
    dx = pool3_backward(x, g, "max")
    # the centre window covers the whole image; the first max in row-major order is (0, 0)
    assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0


def test_avg_pool_border_divides_by_nine():
    x = np.ones((1, 1, 4, 4))
    assert pool3(x, "avg")[0, 0, 0, 0] == pytest.approx(4 / 9)


def test_pointwise_values():
    assert sigmoid(np.zeros((1, 1, 1, 1)))[0, 0, 0, 0] == 0.5
    assert np.all(np.isfinite(sigmoid(np.array([-1e4, 1e4]))))
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    s = softmax(np.random.default_rng(0).standard_normal((5, 6)) * 30)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(np.zeros((1, 6))), np.full((1, 6), 1 / 6))


def test_dense_and_concat(rng):
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
    np.testing.assert_allclose(dense(x, w, b), x @ w.T + b)
    a, c = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 1, 3, 3))
    cat = concat_channels([a, c])
    assert cat.shape == (1, 3, 3, 3)
    ga, gc = split_backward(cat, [2, 1])
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gc, c)


def test_bce_values_and_clamp():
    pred = np.array([0.9, 0.2, 0.0, 1.0]).reshape(1, 1, 2, 2)
    tgt = np.array([1.0, 0.0, 0.0, 1.0]).reshape(1, 1, 2, 2)
    loss, grad = bce_loss(pred, tgt)
    expect = -(np.log(0.9) + np.log(0.8) + np.log(1 - 1e-7) + np.log(1 - 1e-7)) / 4
    assert loss == pytest.approx(expect, rel=1e-12)
    assert grad[0, 0, 1, 0] == 0.0 and grad[0, 0, 1, 1] == 0.0
    assert grad[0, 0, 0, 0] == pytest.approx(-1 / 0.9 / 4)


def test_adam_matches_scalar_trace():
    p = {"w": np.array([0.5, -1.0])}
    st = AdamState.for_params(p)
    ref = [0.5, -1.0]
    m = [0.0, 0.0]
    v = [0.0, 0.0]
    for t in range(1, 6):
        g = [2 * ref[0], 3.0]
        adam_step(p, {"w": np.array(g)}, st, lr=0.01)
        for i in range(2):
            m[i] = 0.9 * m[i] + 0.1 * g[i]
            v[i] = 0.999 * v[i] + 0.001 * g[i] ** 2
            mh = m[i] / (1 - 0.9 ** t)
            vh = v[i] / (1 - 0.999 ** t)
            ref[i] -= 0.01 * mh / (mh * 0 + vh ** 0.5 + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)
    assert st.t == 5


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, 2.0])}
    adam_step(p, {"w": np.array([0.3, -7.0])}, AdamState.for_params(p), lr=0.1)
    np.testing.assert_allclose(p["w"], [0.9, 2.1], atol=1e-6)


def test_adam_shape_mismatch():
    p = {"w": np.zeros(3)}
    with pytest.raises(ContractError):
        adam_step(p, {"w": np.zeros(2)}, AdamState.for_params(p), 0.1)


def test_grad_check_detects_wrong_backward(rng):
    rep = grad_check("wrong", lambda x: x ** 2, lambda v, r: {"x": 3 * v["x"] * r},
                     {"x": rng.standard_normal(5)})
    assert not rep.passed
    ok = grad_check("square", lambda x: x ** 2, lambda v, r: {"x": 2 * v["x"] * r},
                    {"x": rng.standard_normal(5)})
    assert ok.passed and "square" in ok.line()


def test_tensor_rejects_nonfinite():
    with pytest.raises(ContractError):
        tensor(np.array([[[[np.nan]]]]))
