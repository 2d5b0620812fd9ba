"""Central finite-difference gradients, for checking ``backward``."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f() / d x by central differences, perturbing ``x.data`` in place."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both norms are below ``floor``."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error between tape gradients and finite differences, per leaf."""
    with Tape() as tape:
        loss = f()
    analytic = backward(tape, loss, leaves)
    return [relative_error(a, numeric_grad(f, x, h)) for a, x in zip(analytic, leaves)]
