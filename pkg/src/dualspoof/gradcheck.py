"""Finite-difference verification of autograd parameter gradients.

The probe runs in 64-bit: backprop gradients of a scalar loss are compared
element-wise against central differences, and the worst relative error over
all trainable parameters is returned.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import nn

from .errors import NumericError, ParameterError

EPSILON_RANGE = (1e-7, 1e-3)


def max_relative_gradient_error(
    module: nn.Module, loss_fn: Callable[[], torch.Tensor], epsilon: float
) -> float:
    """Max over parameters of |analytic - central difference| relative error.

    `loss_fn` must evaluate the scalar probe loss from the module's current
    parameters. The relative error is floored at unit gradient scale, so
    near-zero gradients are compared absolutely.
    """
    if not EPSILON_RANGE[0] <= epsilon <= EPSILON_RANGE[1]:
        raise ParameterError(
            f"epsilon must lie in [{EPSILON_RANGE[0]}, {EPSILON_RANGE[1]}], got {epsilon}"
        )
    params = [p for p in module.parameters() if p.requires_grad]
    if any(p.dtype != torch.float64 for p in params):
        raise ParameterError("gradient check requires float64 parameters (call .double())")

    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    if loss.ndim != 0:
        raise ParameterError("probe loss must be scalar")
    loss.backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in params
    ]
    if any(not torch.isfinite(g).all() for g in analytic):
        raise NumericError("non-finite analytic gradient")

    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            flat = param.view(-1)
            grad_flat = grad.view(-1)
            for i in range(flat.numel()):
                keep = flat[i].item()
                flat[i] = keep + epsilon
                hi = loss_fn().item()
                flat[i] = keep - epsilon
                lo = loss_fn().item()
                flat[i] = keep
                fd = (hi - lo) / (2.0 * epsilon)
                a = grad_flat[i].item()
                if not (torch.isfinite(torch.tensor(fd)) and torch.isfinite(torch.tensor(a))):
                    raise NumericError("non-finite value in finite-difference probe")
                rel = abs(a - fd) / max(abs(a), abs(fd), 1.0)
                worst = max(worst, rel)
    module.zero_grad(set_to_none=True)
    return worst
