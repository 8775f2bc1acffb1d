"""Pixel-level video metrics and the Frechet proxy distance.

All kernels take (L, C, H, W) arrays or tensors and return Python floats.
Errors and distances are lower-is-better; smoothness and flicker scores are
higher-is-better and lie in (0, 1].
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg
from scipy.ndimage import uniform_filter

from cycflow.errors import DimensionError, NumericError, ValidationError

logger = logging.getLogger(__name__)

FEATURE_GRID = 4
# relative size of a negative eigenvalue still treated as rounding noise
NEGATIVE_EIGEN_LIMIT = 1e-6


def _video(video, min_frames: int, what: str) -> np.ndarray:
    if hasattr(video, "detach"):
        video = video.detach().cpu().numpy()
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise DimensionError(f"{what}: video must be (L, C, H, W), got {v.shape}")
    if v.shape[0] < min_frames:
        raise ValidationError(f"{what} needs at least {min_frames} frames, got {v.shape[0]}")
    return v


def _frame(frame) -> np.ndarray:
    if hasattr(frame, "detach"):
        frame = frame.detach().cpu().numpy()
    return np.asarray(frame, dtype=np.float64)


def mse(a, b) -> float:
    a, b = _frame(a), _frame(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def boundary_error(gen, I1, IL) -> tuple[float, float]:
    v = _video(gen, 1, "boundary_error")
    return mse(v[0], I1), mse(v[-1], IL)


def dynamic_degree(video) -> float:
    v = _video(video, 2, "dynamic_degree")
    return float(np.mean(np.abs(np.diff(v, axis=0))))


def motion_smoothness(video) -> float:
    v = _video(video, 3, "motion_smoothness")
    second = v[2:] - 2.0 * v[1:-1] + v[:-2]
    return float(1.0 / (1.0 + np.mean(np.abs(second))))


def high_pass(frame: np.ndarray) -> np.ndarray:
    """f - box3x3(f) per channel, edges replicated."""
    return frame - uniform_filter(frame, size=(1, 3, 3), mode="nearest")


def temporal_flicker(video) -> float:
    v = _video(video, 2, "temporal_flicker")
    energy = np.mean([np.mean(np.abs(high_pass(d))) for d in np.diff(v, axis=0)])
    return float(1.0 / (1.0 + energy))


# ---------------------------------------------------------------- frechet
def _grid_pool(frames: np.ndarray, grid: int = FEATURE_GRID) -> np.ndarray:
    """Average-pool (..., H, W) onto a grid x grid lattice."""
    h, w = frames.shape[-2:]
    if h % grid or w % grid:
        raise DimensionError(f"frame size {h}x{w} is not divisible by the {grid}x{grid} feature grid")
    shaped = frames.reshape(*frames.shape[:-2], grid, h // grid, grid, w // grid)
    return shaped.mean(axis=(-3, -1))


def clip_features(video) -> np.ndarray:
    """Time-mean of pooled frames concatenated with pooled time-mean of |temporal differences|."""
    v = _video(video, 2, "clip_features")
    appearance = _grid_pool(v.mean(axis=0))
    motion = _grid_pool(np.abs(np.diff(v, axis=0)).mean(axis=0))
    return np.concatenate([appearance.ravel(), motion.ravel()])


def _moments(features) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValidationError(f"Frechet distance needs at least 2 clips per set, got {x.shape[0]}")
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = scipy.linalg.eigh((m + m.T) / 2.0)
    scale = max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -NEGATIVE_EIGEN_LIMIT * scale:
        raise NumericError(f"{what} is not positive semi-definite", min_eigenvalue=float(vals.min()))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if cov_a.shape != cov_b.shape or mu_a.shape != mu_b.shape:
        raise DimensionError(f"moment shapes differ: {cov_a.shape} vs {cov_b.shape}")
    root_a = _psd_sqrt(cov_a, "covariance A")
    cross = _psd_sqrt(root_a @ cov_b @ root_a, "cross covariance")
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def frechet_proxy(set_a, set_b) -> float:
    """Frechet distance between Gaussians fit to two feature sets (rows = clips)."""
    mu_a, cov_a = _moments(set_a)
    mu_b, cov_b = _moments(set_b)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
