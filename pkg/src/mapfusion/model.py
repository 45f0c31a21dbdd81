"""Operation-wise attention fusion network.

Architecture::

    maps (n, K, h, w)
      -> 3x3 conv K->F, relu                     (stem)
      -> L x OwA layer                           (F -> F, spatial size kept)
      -> 1x1 conv F->1, sigmoid                  (head)

One OwA layer runs six operations on its input in parallel (1/3/5/7 convs,
3x3 average and max pooling). A small attention branch (global average pool,
dense, relu, dense, softmax) yields one weight per operation and sample; each
operation output is scaled by its weight, the scaled outputs are concatenated
in operation order, mixed back to F channels by a 1x1 conv, and added to the
layer input.

Parameters live in an ordered ``dict`` whose order is the checkpoint order.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, CheckpointError, ConfigError, ContractError, PayloadError,
                     UsageError, VersionMismatchError)
from .tensor import (conv2d, conv2d_backward, conv2d_multi, conv2d_multi_backward, dense,
                     dense_backward, pool3, pool3_backward, relu, relu_backward, sigmoid,
                     sigmoid_backward, softmax, softmax_backward)

OP_SET = ("conv1", "conv3", "conv5", "conv7", "avgpool3", "maxpool3")
CONV_OPS = (("conv1", 1), ("conv3", 3), ("conv5", 5), ("conv7", 7))
MIN_SIZE = 8

CHECKPOINT_MAGIC = b"OWAF1\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OwaConfig:
    in_channels: int = 5
    feature_width: int = 16
    num_layers: int = 4
    attention_hidden: int = 8
    seed: int = 0
    residual: bool = True
    op_set: tuple = OP_SET

    def __post_init__(self):
        for name in ("in_channels", "feature_width", "num_layers", "attention_hidden"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if tuple(self.op_set) != OP_SET:
            raise ConfigError(f"op_set must be {list(OP_SET)}, got {list(self.op_set)}")
        object.__setattr__(self, "op_set", tuple(self.op_set))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["op_set"] = list(self.op_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OwaConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: OwaConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; the checkpoint manifest order."""
    k, f, hid = config.in_channels, config.feature_width, config.attention_hidden
    nops = len(config.op_set)
    shapes = [("stem.kernel", (f, k, 3, 3)), ("stem.bias", (f,))]
    for i in range(config.num_layers):
        pre = f"layers.{i}."
        for op, size in CONV_OPS:
            shapes += [(pre + op + ".kernel", (f, f, size, size)), (pre + op + ".bias", (f,))]
        shapes += [
            (pre + "dense1.weight", (hid, f)), (pre + "dense1.bias", (hid,)),
            (pre + "dense2.weight", (nops, hid)), (pre + "dense2.bias", (nops,)),
            (pre + "mix.kernel", (f, f * nops, 1, 1)), (pre + "mix.bias", (f,)),
        ]
    shapes += [("head.kernel", (1, f, 1, 1)), ("head.bias", (1,))]
    return shapes


def parameter_count(config: OwaConfig) -> int:
    return sum(math.prod(shape) for _, shape in param_shapes(config))


@dataclass
class OwaModel:
    config: OwaConfig
    params: dict = field(default_factory=dict)

    def layer(self, i: int) -> dict:
        """Parameters of layer ``i`` keyed without the ``layers.i.`` prefix."""
        pre = f"layers.{i}."
        return {name[len(pre):]: p for name, p in self.params.items() if name.startswith(pre)}

    def astype(self, dtype) -> "OwaModel":
        return OwaModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "OwaModel":
        return OwaModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: OwaConfig) -> OwaModel:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, drawn in manifest order."""
    if not isinstance(config, OwaConfig):
        raise ConfigError(f"expected OwaConfig, got {type(config).__name__}")
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, np.float32)
        else:
            fan_in = math.prod(shape[1:])
            params[name] = (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
    return OwaModel(config, params)


# --------------------------------------------------------------------------
# OwA layer
# --------------------------------------------------------------------------

def owa_layer_forward(params: dict, features: np.ndarray, cache: dict | None = None,
                      attention_override: np.ndarray | None = None, residual: bool = True):
    """Return ``(output, attention)`` for one OwA layer.

    ``attention_override`` replaces the softmax weights (shape ``(n, 6)``);
    it exists for tests that need a hand-chosen operation selection.
    """
    n, c, h, w = features.shape
    f = params["mix.kernel"].shape[0]
    if c != f:
        raise ContractError(f"OwA layer expects {f} channels, got {c}")
    nops = params["dense2.weight"].shape[0]
    dtype = features.dtype

    gap = features.mean(axis=(2, 3))
    a1 = dense(gap, params["dense1.weight"], params["dense1.bias"])
    r1 = relu(a1)
    att = softmax(dense(r1, params["dense2.weight"], params["dense2.bias"]))
    if attention_override is not None:
        att = np.asarray(attention_override, dtype=dtype)
        if att.shape != (n, nops):
            raise ContractError(f"attention override shape {att.shape} != {(n, nops)}")

    kernels = [params[op + ".kernel"] for op, _ in CONV_OPS]
    biases = [params[op + ".bias"] for op, _ in CONV_OPS]
    conv_cache = {} if cache is not None else None
    ops = np.empty((n, nops, f, h, w), dtype=dtype)
    ops[:, :4] = conv2d_multi(features, kernels, biases, cache=conv_cache).reshape(n, 4, f, h, w)
    ops[:, 4] = pool3(features, "avg")
    ops[:, 5] = pool3(features, "max")
    # scaling then flattening (op, channel) is the channel concat in op order
    scaled = (ops * att[:, :, None, None, None].astype(dtype)).reshape(n, nops * f, h, w)
    out = conv2d(scaled, params["mix.kernel"], params["mix.bias"])
    if residual:
        out += features
    if cache is not None:
        cache.update(features=features, gap=gap, a1=a1, r1=r1, att=att, ops=ops,
                     scaled=scaled, conv=conv_cache, override=attention_override is not None,
                     residual=residual)
    return out, att


def owa_layer_backward(params: dict, cache: dict, grad_out: np.ndarray):
    """Return ``(grad_features, grads)`` with ``grads`` keyed like ``params``."""
    if not cache:
        raise UsageError("owa_layer_backward needs the cache filled by owa_layer_forward")
    features, att, ops, scaled = cache["features"], cache["att"], cache["ops"], cache["scaled"]
    n, nops, f, h, w = ops.shape
    grads = {}

    dscaled, grads["mix.kernel"], grads["mix.bias"] = conv2d_backward(
        scaled, params["mix.kernel"], grad_out)
    ds = dscaled.reshape(n, nops, f, h, w)
    datt = (ds * ops).sum(axis=(2, 3, 4), dtype=np.float64).astype(features.dtype)
    dops = ds * att[:, :, None, None, None].astype(features.dtype)

    kernels = [params[op + ".kernel"] for op, _ in CONV_OPS]
    dx, dks, dbs = conv2d_multi_backward(features, kernels, dops[:, :4].reshape(n, 4 * f, h, w),
                                         cache=cache["conv"])
    for (op, _), dk, db in zip(CONV_OPS, dks, dbs):
        grads[op + ".kernel"], grads[op + ".bias"] = dk, db
    dx += pool3_backward(features, np.ascontiguousarray(dops[:, 4]), "avg")
    dx += pool3_backward(features, np.ascontiguousarray(dops[:, 5]), "max", out=ops[:, 5])

    if cache["override"]:
        for name in ("dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias"):
            grads[name] = np.zeros_like(params[name])
    else:
        dlogits = softmax_backward(att, datt)
        dr1, grads["dense2.weight"], grads["dense2.bias"] = dense_backward(
            cache["r1"], params["dense2.weight"], dlogits)
        da1 = relu_backward(cache["a1"], dr1)
        dgap, grads["dense1.weight"], grads["dense1.bias"] = dense_backward(
            cache["gap"], params["dense1.weight"], da1)
        dx += (dgap / (h * w))[:, :, None, None].astype(dx.dtype)
    if cache["residual"]:
        dx += grad_out
    return dx, grads


# --------------------------------------------------------------------------
# full model
# --------------------------------------------------------------------------

def _check_input(model: OwaModel, maps: np.ndarray):
    if maps.ndim != 4:
        raise ContractError(f"maps must be (n, K, h, w), got shape {maps.shape}")
    k = model.config.in_channels
    if maps.shape[1] != k:
        raise ContractError(f"model expects K={k} input channels, got {maps.shape[1]}")
    if maps.shape[2] < MIN_SIZE or maps.shape[3] < MIN_SIZE:
        raise ContractError(f"maps must be at least {MIN_SIZE}x{MIN_SIZE}, got "
                            f"{maps.shape[2]}x{maps.shape[3]}")


def forward(model: OwaModel, maps: np.ndarray, cache: dict | None = None,
            return_attention: bool = False):
    """Fused map ``(n, 1, h, w)`` in (0, 1).

    Pass an empty dict as ``cache`` to keep the activations needed by
    :func:`backward`. With ``return_attention`` the per-layer attention
    matrices ``(n, 6)`` are returned as a second value.
    """
    _check_input(model, maps)
    p = model.params
    dtype = p["stem.kernel"].dtype
    x = np.asarray(maps, dtype=dtype)
    s = conv2d(x, p["stem.kernel"], p["stem.bias"])
    z = relu(s)
    layer_caches, attention = [], []
    for i in range(model.config.num_layers):
        lc = {} if cache is not None else None
        z, att = owa_layer_forward(model.layer(i), z, cache=lc, residual=model.config.residual)
        layer_caches.append(lc)
        attention.append(att)
    out = sigmoid(conv2d(z, p["head.kernel"], p["head.bias"]))
    if cache is not None:
        cache.clear()
        cache.update(x=x, s=s, layers=layer_caches, z=z, out=out)
    return (out, attention) if return_attention else out


def backward(model: OwaModel, cache: dict, grad_out: np.ndarray) -> dict:
    """Gradients of every parameter given ``d loss / d output``."""
    if not cache or "out" not in cache:
        raise UsageError("backward called without a forward cache; run forward(..., cache={}) first")
    out = cache["out"]
    if grad_out.shape != out.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != output shape {out.shape}")
    p = model.params
    grads = {}
    dlogit = sigmoid_backward(out, grad_out.astype(out.dtype, copy=False))
    dz, grads["head.kernel"], grads["head.bias"] = conv2d_backward(cache["z"], p["head.kernel"], dlogit)
    for i in reversed(range(model.config.num_layers)):
        dz, lg = owa_layer_backward(model.layer(i), cache["layers"][i], dz)
        for name, g in lg.items():
            grads[f"layers.{i}.{name}"] = g
    ds = relu_backward(cache["s"], dz)
    _, grads["stem.kernel"], grads["stem.bias"] = conv2d_backward(cache["x"], p["stem.kernel"], ds)
    return {name: grads[name].astype(p[name].dtype, copy=False) for name in p}


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: OwaModel, path) -> Path:
    path = Path(path)
    header = {
        "format": "OWAF1",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": [{"name": name, "shape": list(shape)} for name, shape in param_shapes(model.config)],
    }
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    for name, shape in param_shapes(model.config):
        arr = model.params[name]
        if arr.shape != shape:
            raise ContractError(f"parameter {name} has shape {arr.shape}, config implies {shape}")
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    path.write_bytes(bytes(blob))
    return path


def load_checkpoint(path) -> OwaModel:
    data = Path(path).read_bytes()
    magic = data[:len(CHECKPOINT_MAGIC)]
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    end = data.find(b"\n", len(CHECKPOINT_MAGIC))
    if end < 0:
        raise PayloadError(f"{path}: checkpoint header is not terminated")
    try:
        header = json.loads(data[len(CHECKPOINT_MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {exc}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {header.get('version')!r}, "
                                   f"this build reads {CHECKPOINT_VERSION}")
    try:
        config = OwaConfig.from_dict(header["config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise PayloadError(f"{path}: invalid config in header: {exc}") from None
    expected = param_shapes(config)
    manifest = [(b.get("name"), tuple(b.get("shape", ()))) for b in header.get("params", [])]
    if manifest != expected:
        raise PayloadError(f"{path}: parameter manifest does not match the shapes implied by the config")
    payload = data[end + 1:]
    total = sum(math.prod(shape) for _, shape in expected)
    if len(payload) != 4 * total:
        raise PayloadError(f"{path}: payload has {len(payload)} bytes, expected {4 * total}")
    values = np.frombuffer(payload, dtype="<f4")
    params, offset = {}, 0
    for name, shape in expected:
        size = math.prod(shape)
        params[name] = values[offset:offset + size].reshape(shape).astype(np.float32)
        offset += size
    return OwaModel(config, params)
