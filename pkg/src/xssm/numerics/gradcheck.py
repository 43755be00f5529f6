"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, no_grad


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    n_coords: int

    def passed(self, tol: float) -> bool:
        return self.rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
              max_coords: int | None = None, seed: int = 0, name: str = "") -> GradCheckResult:
    """Compare tape gradients of scalar ``fn()`` with central differences.

    ``fn`` must read the current ``.data`` of ``tensors`` on every call. With
    ``max_coords`` set, at most that many coordinates per tensor are probed.
    """
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for t in tensors:
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = fn().item()
            flat[i] = orig - h
            with no_grad():
                fm = fn().item()
            flat[i] = orig
            numeric.append((fp - fm) / (2.0 * h))
            analytic.append(grad.reshape(-1)[i])
    return GradCheckResult(name, relative_error(np.array(analytic), np.array(numeric)), len(analytic))


def random_projection(shape, seed: int = 1) -> np.ndarray:
    """Fixed random weights for reducing a tensor output to a scalar loss."""
    return np.random.default_rng(seed).standard_normal(shape)
