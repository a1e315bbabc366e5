"""Central finite-difference checks against the tape's gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor

# Denominator floor: gradients whose norm is below this are compared
# absolutely, since FD round-off (~eps*|f|/h) swamps their relative error.
GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index, h: float = 1e-5) -> float:
    old = t.values[index]
    t.values[index] = old + h
    up = fn().item()
    t.values[index] = old - h
    down = fn().item()
    t.values[index] = old
    return (up - down) / (2.0 * h)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest per-tensor relative error between tape and FD gradients.

    ``fn`` must rebuild the scalar loss from the current values of
    ``inputs`` on every call (any randomness inside must be re-seeded).
    With ``max_per_tensor`` only that many randomly chosen entries of each
    tensor are probed.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for t, g in zip(inputs, grads):
        flat = np.arange(t.size)
        if max_per_tensor is not None and t.size > max_per_tensor:
            flat = rng.choice(t.size, size=max_per_tensor, replace=False)
        idx = [np.unravel_index(i, t.shape) for i in flat]
        num = np.array([numeric_grad(fn, t, i, h) for i in idx])
        ana = np.array([g[i] for i in idx])
        worst = max(worst, relative_error(ana, num))
    return worst


def directional_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    directions: int = 3,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare <grad, u> with the FD slope along random unit directions u."""
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for _ in range(directions):
        us = [rng.normal(size=t.shape) for t in inputs]
        norm = np.sqrt(sum(float(np.sum(u * u)) for u in us))
        us = [u / norm for u in us]
        ana = sum(float(np.sum(g * u)) for g, u in zip(grads, us))
        originals = [t.values.copy() for t in inputs]
        for t, u in zip(inputs, us):
            t.values += h * u
        up = fn().item()
        for t, o, u in zip(inputs, originals, us):
            t.values[...] = o - h * u
        down = fn().item()
        for t, o in zip(inputs, originals):
            t.values[...] = o
        num = (up - down) / (2.0 * h)
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR))
    return worst
