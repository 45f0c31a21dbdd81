"""Finite-difference gradient suite over every primitive and a small model."""
from __future__ import annotations

import numpy as np

from .model import OwaConfig, backward, forward, init_model, owa_layer_backward, owa_layer_forward
from .tensor import (bce_loss, concat_channels, conv2d, conv2d_backward, conv2d_multi,
                     conv2d_multi_backward, dense, dense_backward, grad_check, pool3, pool3_backward,
                     relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward,
                     split_backward)

PRIMITIVE_TOL = 1e-3
MODEL_TOL = 1e-2
# composite checks use a smaller step: a 1e-3 nudge can push a stem
# pre-activation across the relu kink, which no analytic gradient matches
COMPOSITE_STEP = 1e-4


def _distinct(rng, shape, scale=1.0):
    # well-separated values keep max-pool argmax and relu kinks stable under perturbation
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) / n * 4 * scale
    return vals.reshape(shape)


def _conv_checks(rng):
    out = []
    x = rng.standard_normal((2, 3, 7, 6))
    for k in (1, 3, 5, 7):
        kern = rng.standard_normal((2, 3, k, k)) * 0.3
        bias = rng.standard_normal(2)
        out.append(grad_check(
            f"conv{k}",
            lambda x, kernel, bias: conv2d_multi(x, [kernel], [bias]),
            lambda v, r: dict(zip(("x", "kernel", "bias"), _flat_multi(conv2d_multi_backward(
                v["x"], [v["kernel"]], r)))),
            {"x": x, "kernel": kern, "bias": bias}, tolerance=PRIMITIVE_TOL, seed=k))
    kern = rng.standard_normal((2, 3, 3, 3)) * 0.3
    out.append(grad_check(
        "conv3_direct",
        lambda x, kernel, bias: conv2d(x, kernel, bias),
        lambda v, r: dict(zip(("x", "kernel", "bias"), conv2d_backward(v["x"], v["kernel"], r))),
        {"x": x, "kernel": kern, "bias": rng.standard_normal(2)}, tolerance=PRIMITIVE_TOL))
    return out


def _flat_multi(res):
    gi, gks, gbs = res
    return gi, gks[0], gbs[0]


def gradcheck_suite(seed: int = 0) -> list:
    """Run every check; returns a list of :class:`GradCheckReport`."""
    rng = np.random.default_rng(seed)
    reports = _conv_checks(rng)
    for mode in ("avg", "max"):
        reports.append(grad_check(
            f"{mode}pool3", lambda x, m=mode: pool3(x, m),
            lambda v, r, m=mode: {"x": pool3_backward(v["x"], r, m)},
            {"x": _distinct(rng, (2, 2, 6, 5))}, tolerance=PRIMITIVE_TOL))
    reports.append(grad_check(
        "sigmoid", lambda x: sigmoid(x), lambda v, r: {"x": sigmoid_backward(sigmoid(v["x"]), r)},
        {"x": rng.standard_normal((2, 3, 4, 4)) * 2}, tolerance=PRIMITIVE_TOL))
    reports.append(grad_check(
        "relu", lambda x: relu(x), lambda v, r: {"x": relu_backward(v["x"], r)},
        {"x": _distinct(rng, (2, 3, 4, 4))}, tolerance=PRIMITIVE_TOL))
    reports.append(grad_check(
        "softmax", lambda x: softmax(x), lambda v, r: {"x": softmax_backward(softmax(v["x"]), r)},
        {"x": rng.standard_normal((3, 6))}, tolerance=PRIMITIVE_TOL))
    reports.append(grad_check(
        "dense", lambda x, w, b: dense(x, w, b),
        lambda v, r: dict(zip(("x", "w", "b"), dense_backward(v["x"], v["w"], r))),
        {"x": rng.standard_normal((3, 5)), "w": rng.standard_normal((4, 5)), "b": rng.standard_normal(4)},
        tolerance=PRIMITIVE_TOL))
    reports.append(grad_check(
        "concat", lambda a, b: concat_channels([a, b]),
        lambda v, r: dict(zip(("a", "b"), split_backward(r, [2, 3]))),
        {"a": rng.standard_normal((2, 2, 3, 3)), "b": rng.standard_normal((2, 3, 3, 3))},
        tolerance=PRIMITIVE_TOL))
    target = (rng.random((2, 1, 4, 4)) > 0.5).astype(np.float64)
    reports.append(grad_check(
        "bce", lambda p: np.array(bce_loss(p, target)[0]),
        lambda v, r: {"p": bce_loss(v["p"], target)[1] * r},
        {"p": rng.uniform(0.05, 0.95, (2, 1, 4, 4))}, tolerance=PRIMITIVE_TOL))
    reports.append(_owa_layer_check(rng))
    reports.append(_model_check(seed))
    return reports


def _owa_layer_check(rng):
    cfg = OwaConfig(in_channels=2, feature_width=3, num_layers=1, attention_hidden=4, seed=3)
    params = {k: v.astype(np.float64) for k, v in init_model(cfg).layer(0).items()}
    for name in params:
        if name.endswith("bias"):
            params[name] = rng.standard_normal(params[name].shape) * 0.1
    feats = _distinct(rng, (2, 3, 6, 6))
    names = sorted(params)

    def fwd(**kw):
        p = {n: kw[n.replace(".", "__")] for n in names}
        return owa_layer_forward(p, kw["features"])[0]

    def bwd(v, r):
        p = {n: v[n.replace(".", "__")] for n in names}
        cache = {}
        owa_layer_forward(p, v["features"], cache=cache)
        dx, g = owa_layer_backward(p, cache, r)
        out = {n.replace(".", "__"): g[n] for n in names}
        out["features"] = dx
        return out

    inputs = {n.replace(".", "__"): params[n] for n in names}
    inputs["features"] = feats
    return grad_check("owa_layer", fwd, bwd, inputs, perturbation=COMPOSITE_STEP, tolerance=PRIMITIVE_TOL)


def _model_check(seed):
    cfg = OwaConfig(in_channels=5, feature_width=4, num_layers=2, attention_hidden=8, seed=seed)
    model = init_model(cfg).astype(np.float64)
    names = list(model.params)
    x = np.random.default_rng(seed + 1).random((1, 5, 8, 8))

    def fwd(**kw):
        m = type(model)(cfg, {n: kw[n.replace(".", "__")] for n in names})
        return forward(m, kw["maps"])

    def bwd(v, r):
        m = type(model)(cfg, {n: v[n.replace(".", "__")] for n in names})
        cache = {}
        forward(m, v["maps"], cache=cache)
        g = backward(m, cache, r)
        return {n.replace(".", "__"): g[n] for n in names}

    inputs = {n.replace(".", "__"): model.params[n] for n in names}
    inputs["maps"] = x
    return grad_check("model_depth2_F4", fwd, bwd, inputs, perturbation=COMPOSITE_STEP,
                      tolerance=MODEL_TOL)
