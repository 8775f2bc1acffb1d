"""Deterministic stand-in for a video VAE.

Encoding averages each 2x2 pixel block per channel per frame (and, with a
temporal factor of 2, each pair of frames after the first). Decoding is
nearest-neighbour replication. Videos are (L, C, H, W) or batched
(B, L, C, H, W); the time axis is always the fourth from the end.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from cycflow.errors import DimensionError, NumericError

TIME_AXIS = -4


def as_tensor(x, dtype: torch.dtype | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(x, dtype=dtype or torch.float32)


def _pool2(x: torch.Tensor) -> torch.Tensor:
    # pairwise sums keep block-constant inputs exact: (a+a)+(a+a) = 4a
    top = x[..., 0::2, 0::2] + x[..., 0::2, 1::2]
    bottom = x[..., 1::2, 0::2] + x[..., 1::2, 1::2]
    return (top + bottom) * 0.25


@dataclass(frozen=True)
class Codec:
    spatial: int = 2
    temporal: int = 1

    def __post_init__(self):
        if self.spatial != 2:
            raise DimensionError(f"only 2x spatial compression is supported, got {self.spatial}")
        if self.temporal not in (1, 2):
            raise DimensionError(f"temporal compression must be 1 or 2, got {self.temporal}")

    # ---- shape contracts ----
    def latent_length(self, frames: int) -> int:
        if frames < 2:
            raise DimensionError(f"a video needs at least 2 frames, got {frames}")
        if (frames - 1) % self.temporal:
            raise DimensionError(
                f"{frames} frames cannot be compressed {self.temporal}x in time "
                f"(frames - 1 must be divisible by {self.temporal})"
            )
        return 1 + (frames - 1) // self.temporal

    def video_length(self, latent_frames: int) -> int:
        return 1 + (latent_frames - 1) * self.temporal

    def latent_shape(self, video_shape) -> tuple:
        *lead, frames, channels, height, width = video_shape
        self._check_spatial(height, width)
        return (*lead, self.latent_length(frames), channels, height // 2, width // 2)

    @staticmethod
    def _check_spatial(height: int, width: int) -> None:
        if height % 2 or width % 2:
            raise DimensionError(f"height and width must be even, got {height}x{width}")

    # ---- transforms ----
    def encode_frames(self, frames) -> torch.Tensor:
        """Spatial-only encoding of (..., C, H, W) frames."""
        frames = as_tensor(frames)
        if frames.ndim < 3:
            raise DimensionError(f"frames need at least (C, H, W) axes, got {tuple(frames.shape)}")
        self._check_spatial(frames.shape[-2], frames.shape[-1])
        return _pool2(frames)

    def encode(self, video) -> torch.Tensor:
        video = as_tensor(video)
        if video.ndim not in (4, 5):
            raise DimensionError(f"video must be (L,C,H,W) or (B,L,C,H,W), got {tuple(video.shape)}")
        self.latent_shape(video.shape)
        latent = _pool2(video)
        if self.temporal == 1:
            return latent
        first = latent.narrow(TIME_AXIS, 0, 1)
        rest = latent.narrow(TIME_AXIS, 1, latent.shape[TIME_AXIS] - 1)
        rest = (rest[..., 0::2, :, :, :] + rest[..., 1::2, :, :, :]) * 0.5
        return torch.cat([first, rest], dim=TIME_AXIS)

    def decode(self, latent, clamp: bool = True) -> torch.Tensor:
        """Nearest-neighbour 2x upsampling; `clamp=False` is the differentiable path used by losses."""
        latent = as_tensor(latent)
        if latent.ndim not in (4, 5):
            raise DimensionError(f"latent must be (l,c,h,w) or (B,l,c,h,w), got {tuple(latent.shape)}")
        if not torch.isfinite(latent).all():
            raise NumericError("latent contains non-finite values")
        video = latent.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
        if self.temporal > 1:
            first = video.narrow(TIME_AXIS, 0, 1)
            rest = video.narrow(TIME_AXIS, 1, video.shape[TIME_AXIS] - 1)
            rest = rest.repeat_interleave(self.temporal, dim=TIME_AXIS)
            video = torch.cat([first, rest], dim=TIME_AXIS)
        return video.clamp(0.0, 1.0) if clamp else video

    def round_trip_error(self, video) -> float:
        video = as_tensor(video)
        restored = self.decode(self.encode(video), clamp=False)
        return float(torch.mean((restored - video) ** 2))
