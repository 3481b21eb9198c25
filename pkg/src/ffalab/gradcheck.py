"""Central finite-difference checks of the autodiff gradients, in float64.

The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)`` where
``a`` is the analytic and ``n`` the numeric derivative. ``floor`` is
``1e-3 * max|n|`` over the checked entries, which keeps entries whose true
derivative is (nearly) zero from dividing by round-off.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import GradTape, Tensor, backward, precision

__all__ = ["relative_error", "numeric_grad", "check_gradients"]


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    floor = max(1e-3 * float(np.abs(n).max()), np.finfo(np.float64).tiny)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))


def numeric_grad(f: Callable[[Mapping[str, np.ndarray]], float], arrays: Mapping[str, np.ndarray],
                 name: str, indices: Sequence[tuple] | None = None, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``arrays[name]`` at ``indices`` (all by default)."""
    base = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    target = base[name]
    idx = list(np.ndindex(target.shape)) if indices is None else list(indices)
    out = np.empty(len(idx))
    for i, ix in enumerate(idx):
        orig = target[ix]
        target[ix] = orig + step
        fp = f(base)
        target[ix] = orig - step
        fm = f(base)
        target[ix] = orig
        out[i] = (fp - fm) / (2 * step)
    return out


def check_gradients(fn: Callable[..., Tensor], inputs: Mapping[str, np.ndarray], step: float = 1e-4,
                    indices: Mapping[str, Sequence[tuple]] | None = None) -> dict[str, float]:
    """Compare analytic and numeric gradients of ``fn(**tensors)`` in float64.

    ``fn`` receives float64 tensors (keyword arguments named like ``inputs``)
    and must return a scalar tensor. Returns the relative error per input.
    """
    with precision(np.float64):
        def value(arrs):
            ts = {k: Tensor(v) for k, v in arrs.items()}
            return fn(**ts).item()

        ts = {k: Tensor(v, requires_grad=True, name=k) for k, v in inputs.items()}
        with GradTape() as tape:
            tape.watch(ts)
            loss = fn(**ts)
        grads = backward(loss, tape)
        errors = {}
        for k in inputs:
            ix = None if indices is None else indices.get(k)
            num = numeric_grad(value, inputs, k, ix, step)
            ana = grads[k].ravel() if ix is None else np.array([grads[k][i] for i in ix])
            errors[k] = relative_error(ana, num)
    return errors
