"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 200,
    rng: np.random.Generator | None = None,
    analytic_dtype=None,
) -> float:
    """Largest relative error between backprop and central differences.

    ``loss_fn`` must rebuild the graph from ``params`` on every call and
    return a scalar.  Gradients are compared coordinate by coordinate; when
    a parameter has more than ``max_coords`` entries a random subset of that
    size is checked.  The finite differences are always taken in 64-bit.
    The analytic gradient is computed in ``analytic_dtype`` (default 64-bit);
    pass ``np.float32`` to verify the 32-bit path.
    """
    rng = rng or np.random.default_rng(0)
    originals = [p.data for p in params]
    analytic_dtype = np.float64 if analytic_dtype is None else analytic_dtype
    try:
        for p, orig in zip(params, originals):
            p.data = orig.astype(analytic_dtype)
            p.grad = None
        loss = loss_fn()
        if loss.size != 1:
            raise ValueError(f"gradient_check needs a scalar loss, got shape {loss.shape}")
        loss.backward()
        analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]

        worst = 0.0
        for p, orig in zip(params, originals):
            p.data = orig.astype(np.float64)
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            numeric = np.empty(len(coords))
            for n, i in enumerate(coords):
                saved = flat[i]
                flat[i] = saved + eps
                f_plus = float(loss_fn().data)
                flat[i] = saved - eps
                f_minus = float(loss_fn().data)
                flat[i] = saved
                numeric[n] = (f_plus - f_minus) / (2 * eps)
            errors = relative_error(grad.reshape(-1)[coords], numeric)
            if errors.size:
                worst = max(worst, float(errors.max()))
        return worst
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.grad = None
