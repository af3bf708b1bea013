from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor, backward, zero_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst: tuple[int, int] = (-1, -1)  # (param index, flat coordinate)
    per_param: list[float] = field(default_factory=list)

    @property
    def pass_(self) -> bool:
        return self.passed


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central finite differences.

    Per coordinate the relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``max_coords`` limits each parameter to a random subset of coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def value() -> float:
        v = f().item()
        if not np.isfinite(v):
            raise NumericError(f"f is not finite at a probe point ({v})")
        return v

    zero_grad(params)
    root = f()
    if not np.isfinite(root.item()):
        raise NumericError("f is not finite at the base point")
    backward(root)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)

    worst_err, worst = 0.0, (-1, -1)
    per_param = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        a_flat = analytic[pi].reshape(-1)
        p_err = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = value()
            flat[c] = orig - h
            fm = value()
            flat[c] = orig
            num = (fp - fm) / (2.0 * h)
            a = a_flat[c]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            if err > p_err:
                p_err = err
            if err > worst_err:
                worst_err, worst = err, (pi, int(c))
        per_param.append(p_err)
    return GradCheckReport(worst_err, worst_err < tol, worst, per_param)
