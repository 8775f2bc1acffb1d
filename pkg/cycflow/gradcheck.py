"""Central finite-difference check of autograd gradients.

Probes single scalar parameters: (loss(w + h) - loss(w - h)) / 2h against the
analytic gradient. Run the model in double precision for meaningful results.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from cycflow.errors import NumericError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class Probe:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale


def _named_trainable(params) -> list[tuple[str, torch.Tensor]]:
    if isinstance(params, nn.Module):
        return [(n, p) for n, p in params.named_parameters() if p.requires_grad]
    return [(f"param{i}", p) for i, p in enumerate(params) if p.requires_grad]


def _evaluate(loss_fn: Callable[[], torch.Tensor]) -> float:
    with torch.no_grad():
        value = float(loss_fn())
    if not np.isfinite(value):
        raise NumericError("loss is not finite during gradient check")
    return value


def gradient_check(
    params: nn.Module | Sequence[torch.Tensor],
    loss_fn: Callable[[], torch.Tensor],
    probe_count: int = 32,
    step: float = 1e-4,
    seed: int = 0,
    names: Iterable[str] | None = None,
    return_probes: bool = False,
):
    """
    Return the worst relative error over `probe_count` random scalar probes.

    `loss_fn` takes no arguments and must be deterministic. Probes are drawn by
    first choosing a trainable tensor uniformly, then an element within it, so
    small tensors (tokens, heads) are covered as well as large ones. `names`
    restricts probing to tensors whose name contains one of the given strings.
    """
    named = _named_trainable(params)
    if names is not None:
        wanted = list(names)
        named = [(n, p) for n, p in named if any(w in n for w in wanted)]
    if not named:
        raise ValidationError("no trainable parameters to probe")

    for _, p in named:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError("loss is not finite during gradient check")
    loss.backward()

    rng = np.random.default_rng(seed)
    probes: list[Probe] = []
    for _ in range(probe_count):
        name, p = named[int(rng.integers(len(named)))]
        index = int(rng.integers(p.numel()))
        grad = p.grad.reshape(-1)[index].item() if p.grad is not None else 0.0
        flat = p.data.view(-1)
        original = flat[index].item()
        flat[index] = original + step
        plus = _evaluate(loss_fn)
        flat[index] = original - step
        minus = _evaluate(loss_fn)
        flat[index] = original
        probes.append(Probe(name, index, grad, (plus - minus) / (2 * step)))

    worst = max(pr.relative_error for pr in probes)
    logger.info("gradient check: %d probes, worst relative error %.3e", len(probes), worst)
    return (worst, probes) if return_probes else worst
