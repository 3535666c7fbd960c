"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class GradientCheckError(ArithmeticError):
    pass


def gradient_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` must rebuild the scalar objective from ``params`` on every call.
    The error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise GradientCheckError(f"gradient checks need float64 tensors, got {p.dtype}")
    for p in params:
        if not p.data.flags.c_contiguous:     # the flat view below must alias the data
            p.data = p.data.copy()
        p.zero_grad()
    out = fn()
    if out.size != 1:
        raise GradientCheckError(f"objective must be scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradientCheckError("objective is not finite")
    out.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        if not np.isfinite(grad).all():
            raise GradientCheckError("analytic gradient is not finite")
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise GradientCheckError("numeric gradient is not finite")
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
