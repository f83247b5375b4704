"""Central finite differences against autograd, parameter by parameter."""

from __future__ import annotations

from typing import Callable

import torch
from torch import nn


def finite_difference_grads(loss_fn: Callable[[], torch.Tensor], model: nn.Module,
                            h: float = 1e-5) -> dict[str, torch.Tensor]:
    """``(L(p + h) - L(p - h)) / 2h`` for every scalar parameter, forward passes only."""
    grads = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            g = torch.empty_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads[name] = g
    return grads


def autograd_grads(loss_fn: Callable[[], torch.Tensor], model: nn.Module) -> dict[str, torch.Tensor]:
    model.zero_grad()
    loss_fn().backward()
    # parameters the loss does not touch get zero, as finite differences would
    return {name: torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
            for name, p in model.named_parameters()}


def max_relative_error(analytic: dict[str, torch.Tensor], numeric: dict[str, torch.Tensor],
                       floor: float = 1e-6) -> dict[str, float]:
    """Per tensor, ``max |a - n| / max(|a|, |n|, floor * max|n|)``.

    The floor is relative to the largest numeric gradient overall, so entries
    that are zero up to round-off do not dominate.
    """
    scale = max(float(n.abs().max()) for n in numeric.values())
    out = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.tensor(floor * scale, dtype=a.dtype))
        out[name] = float(((a - n).abs() / denom).max())
    return out
