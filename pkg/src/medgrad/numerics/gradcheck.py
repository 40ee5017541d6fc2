"""Central finite-difference oracle for gradient checks.

Only forward evaluations are used here, so the oracle is independent of the
backward rules it checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from medgrad.numerics.tensor import Tensor, backward, no_grad


def numeric_grad(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    rel_step: float | None = None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Estimate d f / d t for each tensor by central differences.

    Uses the five-point stencil ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``
    with ``h = rel_step * (1 + |x|)``. The default step is 1e-4 for float64
    (truncation, O(h^4), dominates near sharply curved points such as a layer
    norm over a low-variance row) and 1e-3 for float32 (roundoff, O(eps/h),
    dominates). With ``max_entries`` only a random subset of coordinates per
    tensor is probed. Returns ``(flat_indices, estimates)`` per tensor.
    """
    rng = rng or np.random.default_rng(0)
    out = []
    with no_grad():
        for t in tensors:
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            est = np.empty(idx.size, dtype=np.float64)
            step = rel_step if rel_step is not None else (1e-4 if flat.dtype == np.float64 else 1e-3)
            for j, i in enumerate(idx):
                x0 = flat[i]
                h = flat.dtype.type(step * (1.0 + abs(float(x0))))
                vals = []
                for k in (2, 1, -1, -2):
                    flat[i] = x0 + k * h
                    vals.append(float(f().item()))
                flat[i] = x0
                f2, f1, fm1, fm2 = vals
                est[j] = (-f2 + 8 * f1 - 8 * fm1 + fm2) / (12 * float(h))
            out.append((idx, est))
    return out


def analytic_grad(f: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    loss = f()
    backward(loss)
    return [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps identically-zero gradients (a constant function) from
    turning roundoff into a relative error of 1.
    """
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradient_error(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    rel_step: float | None = None,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Relative error between backward() and finite differences over all probed entries."""
    rng = np.random.default_rng(seed)
    ana = analytic_grad(f, tensors)
    num = numeric_grad(f, tensors, rel_step, max_entries, rng)
    a = np.concatenate([g.reshape(-1)[idx] for g, (idx, _) in zip(ana, num)])
    n = np.concatenate([est for _, est in num])
    return relative_error(a, n)
