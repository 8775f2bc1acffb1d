"""Endpoint-conditioned interpolation: one sampler pass, no backward direction at test time."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import torch

from cycflow.codec import Codec, as_tensor
from cycflow.config import section_from_dict, section_to_dict
from cycflow.flowmatch import EndpointCondition, euler_sample
from cycflow.model import Direction, VelocityNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleConfig:
    frames: int = 17
    steps: int = 16
    seed: int = 0
    clamp_endpoints: bool = False
    direction: str = "forward"
    caption: str = "linear,disc"

    def __post_init__(self):
        Direction.parse(self.direction)

    @classmethod
    def from_dict(cls, values: dict) -> "SampleConfig":
        return section_from_dict(cls, values, "sample")

    def to_dict(self) -> dict:
        return section_to_dict(self)


def interpolate(
    model: VelocityNet,
    codec: Codec,
    start,
    end,
    caption_ids: Sequence[int],
    direction="forward",
    frames: int = 17,
    steps: int = 16,
    seed: int = 0,
    clamp: bool = False,
    return_latent: bool = False,
):
    """
    Generate a `frames`-long pixel clip between start and end (C, H, W) frames.

    Returns the decoded video (L, C, H, W), clamped to [0, 1]; with
    `return_latent` the raw sampler output is returned alongside.
    """
    dtype = next(model.parameters()).dtype
    start = as_tensor(start, dtype=dtype)
    end = as_tensor(end, dtype=dtype)
    length = codec.latent_length(frames)
    endpoints = EndpointCondition.interpolation(codec.encode_frames(start), codec.encode_frames(end), length)
    cond = model.build_condition(caption_ids, direction)

    began = time.perf_counter()
    with torch.no_grad():
        latent = euler_sample(model, cond, endpoints, steps, seed, clamp_endpoints=clamp, dtype=dtype)
        video = codec.decode(latent)
    logger.debug(
        "sampled %d frames (%s, %d steps) in %.3fs",
        frames, Direction.parse(direction).value, steps, time.perf_counter() - began,
    )
    return (video, latent) if return_latent else video
