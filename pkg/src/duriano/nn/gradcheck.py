"""Central finite-difference checks for the autodiff graph."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(
    f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5, indices=None
) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x.data`` at ``indices`` (flat)."""
    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = np.zeros(flat.size)
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            out[i] = (up - down) / (2 * eps)
    return out.reshape(x.shape)


def gradient_check(
    f: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-10,
) -> dict[str, float]:
    """Relative error ``|a - n| / max(|a|, |n|)`` per tensor (norms over checked entries).

    ``f`` must be deterministic. With ``max_entries`` set, that many randomly
    chosen coordinates of each tensor are checked instead of all of them.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    f().backward()
    analytic = {k: (np.zeros(t.shape) if t.grad is None else t.grad.copy()) for k, t in tensors.items()}
    errors = {}
    for name, t in tensors.items():
        size = t.data.size
        if max_entries is not None and size > max_entries:
            idx = np.sort(rng.choice(size, max_entries, replace=False))
        else:
            idx = np.arange(size)
        num = numerical_gradient(f, t, eps, idx).reshape(-1)[idx]
        ana = analytic[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num))
        errors[name] = 0.0 if scale < floor else float(np.linalg.norm(ana - num) / scale)
    return errors
