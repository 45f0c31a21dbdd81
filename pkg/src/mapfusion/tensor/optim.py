from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from ..errors import ContractError


@dataclass
class AdamState:
    """Moment accumulators keyed like the parameter mapping they belong to."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **kw) -> "AdamState":
        state = cls(**kw)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` and ``state`` in place."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape "
                                f"{None if g is None else g.shape}, parameter is {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.m[name].shape != p.shape:
            raise ContractError(f"Adam state for {name!r} has shape {state.m[name].shape}, "
                                f"parameter is {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
