"""Central finite-difference verification of analytic backward passes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


@dataclass(frozen=True)
class GradCheckReport:
    op: str
    max_rel_error: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.op:<22s} max_rel_err={self.max_rel_error:.3e}  tol={self.tolerance:.0e}"


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))


def grad_check(op: str,
               forward: Callable[..., np.ndarray],
               backward: Callable[[Mapping[str, np.ndarray], np.ndarray], Mapping[str, np.ndarray]],
               inputs: Mapping[str, np.ndarray],
               perturbation: float = 1e-3,
               tolerance: float = 1e-3,
               seed: int = 0) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``forward``.

    The output is reduced to a scalar with a fixed random projection ``r`` so
    that a single backward call with ``grad_out = r`` yields the gradient of
    ``sum(r * forward(**inputs))`` for every input it reports. Inputs are
    promoted to float64. Only inputs that ``backward`` returns are checked.
    """
    x = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out = np.asarray(forward(**x), dtype=np.float64)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    analytic = backward(x, r)

    def objective():
        return float(np.sum(r * np.asarray(forward(**x), dtype=np.float64)))

    worst = 0.0
    for name, grad in analytic.items():
        arr = x[name]
        grad = np.asarray(grad, dtype=np.float64)
        flat = arr.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + perturbation
            up = objective()
            flat[i] = orig - perturbation
            down = objective()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * perturbation)
        err = relative_error(grad.reshape(-1), numeric)
        if err.size:
            worst = max(worst, float(err.max()))
    return GradCheckReport(op, worst, tolerance, worst <= tolerance)
