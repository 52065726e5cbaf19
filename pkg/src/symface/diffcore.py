"""Autodiff substrate contract, parameter initialization and gradient checking.

PyTorch supplies the reverse-mode machinery. This module pins down which of
its operations the networks rely on, how parameters are initialized, how a
module is evaluated with its parameters stop-gradiented, and how analytic
gradients are compared with central finite differences.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .errors import NumericError, ParameterError

TRUNC_STD = 0.02


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    return x.detach()


def masked_attention_bias(mask: torch.Tensor) -> torch.Tensor:
    """Turn a boolean may-attend mask into an additive bias (0 or -inf)."""
    bias = torch.zeros(mask.shape, dtype=torch.get_default_dtype())
    return bias.masked_fill(~mask.bool(), float("-inf"))


def required_op_set() -> Mapping[str, Callable]:
    """Operations every network module is built from, all differentiable."""
    from .generator import window_partition, window_reverse

    return {
        "conv2d": F.conv2d,
        "linear": F.linear,
        "layer_norm": F.layer_norm,
        "softmax": torch.softmax,
        "gelu": F.gelu,
        "leaky_relu": F.leaky_relu,
        "sigmoid": torch.sigmoid,
        "log": torch.log,
        "add": torch.add,
        "mul": torch.mul,
        "mean": torch.mean,
        "sum": torch.sum,
        "reshape": torch.reshape,
        "transpose": torch.transpose,
        "window_partition": window_partition,
        "window_reverse": window_reverse,
        "masked_attention_bias": masked_attention_bias,
        "stop_gradient": stop_gradient,
    }


def init_parameters(module: nn.Module, seed: int) -> nn.Module:
    """Seeded init: truncated normal for dense layers, fan-in Kaiming for convs, zero biases."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                nn.init.trunc_normal_(sub.weight, std=TRUNC_STD, a=-2 * TRUNC_STD, b=2 * TRUNC_STD, generator=gen)
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.Conv2d):
                nn.init.kaiming_normal_(sub.weight, a=0.2, mode="fan_in", nonlinearity="leaky_relu", generator=gen)
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.LayerNorm):
                sub.weight.fill_(1.0)
                sub.bias.zero_()
        for name, param in module.named_parameters(recurse=True):
            if name.endswith("relative_position_bias_table"):
                nn.init.trunc_normal_(param, std=TRUNC_STD, a=-2 * TRUNC_STD, b=2 * TRUNC_STD, generator=gen)
    return module


def frozen_call(module: nn.Module, *args, **kwargs):
    """Run ``module`` with every parameter stop-gradiented.

    Gradients still flow to the inputs, but never to the module's own
    parameters, so a loss built from this call cannot train the module.
    """
    params = {name: p.detach() for name, p in module.named_parameters()}
    buffers = dict(module.named_buffers())
    return functional_call(module, {**params, **buffers}, args, kwargs)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()


def grad_check(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, epsilon: float = 1e-6) -> float:
    """Max relative error between autograd and central differences of ``f`` at ``x``.

    The relative error of each component uses ``max(|analytic|, |numeric|, 1e-8)``
    as denominator. ``f`` must return a scalar tensor.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ParameterError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    x = x.detach().clone()
    xg = x.clone().requires_grad_(True)
    y = f(xg)
    if y.numel() != 1:
        raise ParameterError(f"f must be scalar-valued, got shape {tuple(y.shape)}")
    if not torch.isfinite(y).all():
        raise NumericError(f"f(x) is not finite: {y.item()}")
    (analytic,) = torch.autograd.grad(y, xg, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x)
    analytic = analytic.detach().reshape(-1)

    numeric = torch.empty_like(analytic)
    flat = x.reshape(-1)
    with torch.no_grad():
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + epsilon
            up = f(x).item()
            flat[k] = orig - epsilon
            down = f(x).item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite value while perturbing component {k}")
            numeric[k] = (up - down) / (2 * epsilon)

    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(analytic, 1e-8))
    return float(((analytic - numeric).abs() / denom).max())
