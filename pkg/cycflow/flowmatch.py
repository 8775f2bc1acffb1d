"""Rectified-flow algebra and the Euler sampler.

Paths run from clean data at t=0 to Gaussian noise at t=1:
x_t = (1 - t) x0 + t eps, with velocity target eps - x0. Sampling integrates
from t=1 down to t=0 on a uniform grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from cycflow.errors import DimensionError, NumericError, ValidationError

logger = logging.getLogger(__name__)

TIME_AXIS = -4


# ---------------------------------------------------------------- noise
class NoiseStream:
    """Counter-based noise: every draw is keyed by (seed, *counter), never by call order."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, *counter: int) -> torch.Generator:
        key = np.random.SeedSequence([self.seed, *[int(c) for c in counter]])
        state = int(key.generate_state(1, dtype=np.uint64)[0])
        return torch.Generator().manual_seed(state)

    def normal(self, shape, *counter: int, dtype=torch.float32) -> torch.Tensor:
        return torch.randn(tuple(shape), generator=self.generator(*counter), dtype=dtype)

    def uniform(self, shape, *counter: int, dtype=torch.float32) -> torch.Tensor:
        return torch.rand(tuple(shape), generator=self.generator(*counter), dtype=dtype)

    def rng(self, *counter: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *[int(c) for c in counter]]))


# ---------------------------------------------------------------- types
@dataclass
class FlowSample:
    x0: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor
    xt: torch.Tensor

    @classmethod
    def draw(cls, x0: torch.Tensor, eps: torch.Tensor, t) -> "FlowSample":
        return cls(x0=x0, eps=eps, t=torch.as_tensor(t, dtype=x0.dtype), xt=interpolate_state(x0, eps, t))


@dataclass
class EndpointCondition:
    """Start/end latent frames, (c,h,w) or (B,c,h,w), plus a temporal mask of length l."""

    start_latent: torch.Tensor
    end_latent: torch.Tensor
    mask: torch.Tensor

    @classmethod
    def interpolation(cls, start_latent, end_latent, length: int) -> "EndpointCondition":
        if length < 2:
            raise DimensionError(f"interpolation needs at least 2 latent frames, got {length}")
        start_latent = torch.as_tensor(start_latent)
        end_latent = torch.as_tensor(end_latent)
        if start_latent.shape != end_latent.shape:
            raise DimensionError(
                f"start/end latent shapes differ: {tuple(start_latent.shape)} vs {tuple(end_latent.shape)}"
            )
        mask = torch.zeros(length, dtype=start_latent.dtype)
        mask[0] = 1.0
        mask[-1] = 1.0
        return cls(start_latent, end_latent, mask)

    @classmethod
    def from_latent(cls, latent: torch.Tensor) -> "EndpointCondition":
        return cls.interpolation(latent.select(TIME_AXIS, 0), latent.select(TIME_AXIS, -1), latent.shape[TIME_AXIS])

    @property
    def length(self) -> int:
        return int(self.mask.shape[0])

    @property
    def positions(self) -> list[int]:
        return [int(i) for i in torch.nonzero(self.mask).flatten()]

    def channels(self) -> torch.Tensor:
        """Endpoint input channels: start broadcast, end broadcast, mask -> (..., l, 2c+1, h, w)."""
        start, end = self.start_latent, self.end_latent
        l = self.length
        c, h, w = start.shape[-3:]
        lead = start.shape[:-3]
        start_b = start.unsqueeze(-4).expand(*lead, l, c, h, w)
        end_b = end.unsqueeze(-4).expand(*lead, l, c, h, w)
        mask = self.mask.to(start.dtype).view(l, 1, 1, 1).expand(*lead, l, 1, h, w)
        return torch.cat([start_b, end_b, mask], dim=-3)

    def to(self, dtype: torch.dtype) -> "EndpointCondition":
        return EndpointCondition(self.start_latent.to(dtype), self.end_latent.to(dtype), self.mask.to(dtype))

    def swapped(self) -> "EndpointCondition":
        return EndpointCondition(self.end_latent, self.start_latent, self.mask.flip(0))

    def clamp(self, x: torch.Tensor) -> torch.Tensor:
        """Overwrite masked latent frames with the endpoint latents."""
        x = x.clone()
        positions = self.positions
        if positions:
            x.select(TIME_AXIS, positions[0]).copy_(self.start_latent.expand_as(x.select(TIME_AXIS, 0)))
            x.select(TIME_AXIS, positions[-1]).copy_(self.end_latent.expand_as(x.select(TIME_AXIS, 0)))
        return x


# ---------------------------------------------------------------- algebra
def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _time(t, like: torch.Tensor) -> torch.Tensor:
    """Scalar or per-sample t, broadcast against a (..., l, c, h, w) tensor."""
    t = torch.as_tensor(t, dtype=like.dtype)
    if torch.any(t < 0) or torch.any(t > 1) or not torch.isfinite(t).all():
        raise ValidationError(f"t must lie in [0, 1], got {t.tolist()}")
    if t.ndim == 0:
        return t
    if t.ndim != 1 or t.shape[0] != like.shape[0]:
        raise DimensionError(f"per-sample t must have shape ({like.shape[0]},), got {tuple(t.shape)}")
    return t.view(-1, *([1] * (like.ndim - 1)))


def interpolate_state(x0, eps, t) -> torch.Tensor:
    x0, eps = torch.as_tensor(x0), torch.as_tensor(eps)
    _check_shapes(x0, eps, "interpolate_state")
    tt = _time(t, x0)
    return (1 - tt) * x0 + tt * eps


def velocity_target(x0, eps) -> torch.Tensor:
    x0, eps = torch.as_tensor(x0), torch.as_tensor(eps)
    _check_shapes(x0, eps, "velocity_target")
    return eps - x0


def recover_clean(xt, v_hat, t) -> torch.Tensor:
    xt, v_hat = torch.as_tensor(xt), torch.as_tensor(v_hat)
    _check_shapes(xt, v_hat, "recover_clean")
    return xt - _time(t, xt) * v_hat


# ---------------------------------------------------------------- sampler
VelocityFn = Callable[[torch.Tensor, float, object, EndpointCondition], torch.Tensor]


def time_grid(steps: int) -> list[float]:
    """Descending grid t_k = 1 - k/steps for k = 0..steps-1."""
    return [1.0 - k / steps for k in range(steps)]


@torch.no_grad()
def euler_sample(
    velocity_fn: VelocityFn,
    cond,
    endpoints: EndpointCondition,
    steps: int,
    seed: int,
    clamp_endpoints: bool = False,
    init: Optional[torch.Tensor] = None,
    dtype: torch.dtype = torch.float32,
    callback: Optional[Callable[[int, float, torch.Tensor], None]] = None,
) -> torch.Tensor:
    """
    Integrate dx/dt = v from t=1 to t=0 with `steps` uniform Euler steps.

    The initial state is a seeded Gaussian shaped like the latent clip implied
    by `endpoints` unless `init` is given.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    shape = (*endpoints.start_latent.shape[:-3], endpoints.length, *endpoints.start_latent.shape[-3:])
    if init is None:
        x = NoiseStream(seed).normal(shape, 0, dtype=dtype)
    else:
        x = torch.as_tensor(init, dtype=dtype).clone()
        if tuple(x.shape) != shape:
            raise DimensionError(f"initial state shape {tuple(x.shape)} does not match {shape}")
    endpoints = endpoints.to(dtype)
    dt = 1.0 / steps
    for k, t in enumerate(time_grid(steps)):
        v = velocity_fn(x, t, cond, endpoints)
        if not torch.isfinite(v).all():
            raise NumericError("velocity field produced non-finite values", step=k, t=round(t, 6))
        x = x - dt * v
        if clamp_endpoints:
            x = endpoints.clamp(x)
        if callback is not None:
            callback(k, t, x)
    logger.debug("euler_sample finished %d steps for latent %s", steps, shape)
    return x
