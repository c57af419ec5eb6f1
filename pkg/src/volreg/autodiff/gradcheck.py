"""Central finite-difference checks for the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, no_grad


def relative_error(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def analytic_grads(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6) -> np.ndarray:
    """Entry-wise central differences of scalar ``fn()`` w.r.t. ``param``."""
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    with no_grad():
        _fill_central(fn, flat, g.reshape(-1), h)
    return g


def _fill_central(fn, flat, gflat, h):
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn().item()
        flat[i] = old - h
        fm = fn().item()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)


def numeric_directional(fn: Callable[[], Tensor], param: Tensor, direction: np.ndarray,
                        h: float = 1e-6) -> float:
    """Central difference of ``fn`` along ``direction`` in ``param`` space."""
    old = param.data.copy()
    with no_grad():
        param.data[...] = old + h * direction
        fp = fn().item()
        param.data[...] = old - h * direction
        fm = fn().item()
    param.data[...] = old
    return (fp - fm) / (2.0 * h)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
                    directional: bool = False, rng: np.random.Generator | None = None,
                    joint: bool = False) -> float:
    """Largest relative error between backward and finite differences.

    With ``directional=True`` every parameter tensor is probed along one
    random direction instead of entry by entry, which keeps large models cheap.
    ``joint=True`` measures every tensor against the largest gradient entry of
    all ``params``, so a tensor whose true gradient is exactly zero is judged
    on the scale of the whole gradient rather than on its own roundoff.
    """
    grads = analytic_grads(fn, params)
    rng = rng or np.random.default_rng(0)
    pairs = []
    for p, g in zip(params, grads):
        if directional:
            d = rng.standard_normal(p.shape)
            pairs.append((np.sum(g * d), numeric_directional(fn, p, d, h)))
        else:
            pairs.append((g, numeric_grad(fn, p, h)))
    if not joint:
        return max((relative_error(a, b) for a, b in pairs), default=0.0)
    diff = max(float(np.max(np.abs(np.subtract(a, b)), initial=0.0)) for a, b in pairs)
    scale = max(max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
                for a, b in pairs)
    return diff / max(scale, 1e-12)
