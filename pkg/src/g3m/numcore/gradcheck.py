"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor, backward


class GradCheckError(ValueError):
    pass


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def lines(self) -> list[str]:
        return [f"{name:<32s} {err:.3e}" for name, err in self.errors.items()]


def _scalar(out) -> float:
    if isinstance(out, Tensor):
        out = out.data
    return float(np.asarray(out).reshape(-1)[0])


def grad_check(
    model_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-6,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() against central differences for every element.

    ``model_fn`` takes no arguments and reads the current parameter values;
    it must be deterministic (dropout off).  The error for a parameter is
    ``max |analytic - numeric| / max(|numeric|, 1e-8)`` over its elements.
    """
    if not eps > 0:
        raise GradCheckError(f"eps must be positive, got {eps}")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = model_fn()
    if not np.isfinite(loss.data).all():
        raise GradCheckError("loss is not finite at the unperturbed point")
    backward(tape, loss)
    errors: dict[str, float] = {}
    for k, p in enumerate(params):
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _scalar(model_fn())
            flat[i] = orig - eps
            down = _scalar(model_fn())
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss perturbing {p.name or k}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
        errors[p.name or f"param{k}"] = worst
        p.zero_grad()
    return GradCheckReport(errors, tol)
