"""Low-rank adapters over the attention projections of a VelocityNet.

The adapted weight is W + B A with A (r x d_in) drawn from a scaled Gaussian
and B (d_out x r) zero, so an adapted model reproduces its base exactly
until B moves.
"""
from __future__ import annotations

import copy as copylib
import logging
import math
from typing import Dict, Iterable

import torch
import torch.nn as nn
import torch.nn.functional as F

from cycflow.errors import AdapterTargetError, ValidationError

logger = logging.getLogger(__name__)

ATTENTION_TARGETS = tuple(f"{attn}.{proj}" for attn in ("self_attn", "cross_attn") for proj in "qkvo")
TARGET_ALIASES = {
    "attention": ATTENTION_TARGETS,
    "self_attn": tuple(t for t in ATTENTION_TARGETS if t.startswith("self_attn")),
    "cross_attn": tuple(t for t in ATTENTION_TARGETS if t.startswith("cross_attn")),
}


class LoRALinear(nn.Module):
    """Frozen linear map plus a trainable rank-r update."""

    def __init__(self, base: nn.Linear, rank: int, generator: torch.Generator | None = None):
        super().__init__()
        self.in_features = base.in_features
        self.out_features = base.out_features
        self.rank = rank
        # same Parameter objects as the base layer, so record names stay `<name>.weight`
        self.weight = base.weight
        self.bias = base.bias
        self.weight.requires_grad_(False)
        if self.bias is not None:
            self.bias.requires_grad_(False)
        a = torch.randn(rank, self.in_features, generator=generator, dtype=base.weight.dtype)
        self.lora_A = nn.Parameter(a / math.sqrt(self.in_features))
        self.lora_B = nn.Parameter(torch.zeros(self.out_features, rank, dtype=base.weight.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias) + F.linear(F.linear(x, self.lora_A), self.lora_B)

    def effective_weight(self) -> torch.Tensor:
        return self.weight + self.lora_B @ self.lora_A

    def extra_repr(self) -> str:
        return f"in={self.in_features}, out={self.out_features}, rank={self.rank}"


def resolve_targets(targets: Iterable[str]) -> tuple[str, ...]:
    resolved: list[str] = []
    for name in targets:
        expanded = TARGET_ALIASES.get(name, (name,))
        for t in expanded:
            if t not in ATTENTION_TARGETS:
                raise AdapterTargetError(
                    f"unknown adapter target {name!r}; expected one of {list(ATTENTION_TARGETS)} or {list(TARGET_ALIASES)}"
                )
            if t not in resolved:
                resolved.append(t)
    if not resolved:
        raise AdapterTargetError("no adapter targets given")
    return tuple(resolved)


def inject_adapters(params: nn.Module, rank: int, targets: Iterable[str] = ("attention",), seed: int = 0, copy: bool = True):
    """
    Wrap every targeted projection of every block with a LoRALinear.

    The returned model has all base parameters frozen; only `lora_A` and
    `lora_B` require gradients. With `copy=True` the input model is untouched.
    """
    if rank < 1:
        raise ValidationError(f"adapter rank must be >= 1, got {rank}")
    names = resolve_targets(targets)
    model = copylib.deepcopy(params) if copy else params
    for p in model.parameters():
        p.requires_grad_(False)

    generator = torch.Generator().manual_seed(int(seed))
    for i, block in enumerate(model.blocks):
        for target in names:
            attn_name, proj_name = target.split(".")
            attn = getattr(block, attn_name)
            base = getattr(attn, proj_name)
            if isinstance(base, LoRALinear):
                raise ValidationError(f"blocks.{i}.{target} already carries an adapter")
            setattr(attn, proj_name, LoRALinear(base, rank, generator))
    logger.info("injected rank-%d adapters into %d matrices (%d parameters)", rank, len(names) * len(model.blocks), adapter_census(model))
    return model


def adapters(model: nn.Module) -> Dict[str, LoRALinear]:
    return {name: m for name, m in model.named_modules() if isinstance(m, LoRALinear)}


def adapter_census(model: nn.Module) -> int:
    return sum(m.rank * (m.in_features + m.out_features) for m in adapters(model).values())


def adapter_rank(model: nn.Module) -> int | None:
    ranks = {m.rank for m in adapters(model).values()}
    return ranks.pop() if len(ranks) == 1 else None
