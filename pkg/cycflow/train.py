"""Bidirectional cycle-consistent training.

Each optimization step sees one batch of clips twice: once forward under
tau_fwd and once reversed under tau_bwd. Both directions contribute a latent
and a pixel reconstruction term; the four terms are summed with equal weight.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from tqdm.auto import tqdm

from cycflow.codec import Codec, as_tensor
from cycflow.config import section_from_dict, section_to_dict
from cycflow.data import Manifest, reverse
from cycflow.errors import ConfigError, NumericError, ValidationError
from cycflow.flowmatch import EndpointCondition, FlowSample, NoiseStream, recover_clean
from cycflow.lora import inject_adapters
from cycflow.model import Direction, VelocityNet, save_model, with_shared_token
from utils.io import append_csv_row

logger = logging.getLogger(__name__)

MODES = ("full", "adapters_only")
ABLATIONS = ("none", "no_reverse", "no_direction_tokens", "mixed_length", "long_only")
LOSS_COLUMNS = ["step", "phase", "length", "lat_fwd", "pix_fwd", "lat_bwd", "pix_bwd", "total"]

# noise stream tags, keyed together with the step counter
_TAG_BATCH = 101
_TAG_LENGTH = 102


@dataclass(frozen=True)
class TrainConfig:
    lr_adapters: float = 2e-4
    lr_tokens: float = 2e-3
    batch: int = 4
    phase1_steps: int = 1500
    phase2_steps: int = 1500
    lengths: Tuple[int, int] = (9, 17)
    sampler_steps: int = 16
    seed: int = 0
    mode: str = "full"
    ablation: str = "none"
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    tied_noise: bool = False
    log_every: int = 10
    checkpoint_every: int = 500
    lora_rank: int = 64
    lora_targets: Tuple[str, ...] = ("attention",)

    def __post_init__(self):
        if self.lr_adapters <= 0 or self.lr_tokens <= 0:
            raise ConfigError(f"learning rates must be positive, got {self.lr_adapters} / {self.lr_tokens}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.batch < 1 or self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ConfigError("batch must be >= 1 and step counts >= 0")
        if len(self.lengths) != 2 or min(self.lengths) < 2:
            raise ConfigError(f"lengths must be (short, long) with both >= 2, got {self.lengths}")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        return section_from_dict(cls, values, "train")

    def to_dict(self) -> dict:
        return section_to_dict(self)


@dataclass
class LossBreakdown:
    lat_fwd: torch.Tensor
    pix_fwd: torch.Tensor
    lat_bwd: torch.Tensor
    pix_bwd: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.lat_fwd + self.pix_fwd + self.lat_bwd + self.pix_bwd

    def to_dict(self) -> Dict[str, float]:
        terms = {
            "lat_fwd": self.lat_fwd,
            "pix_fwd": self.pix_fwd,
            "lat_bwd": self.lat_bwd,
            "pix_bwd": self.pix_bwd,
            "total": self.total,
        }
        return {name: float(value.detach()) for name, value in terms.items()}


# ---------------------------------------------------------------- loss
Predictor = Callable[[FlowSample, object, EndpointCondition], torch.Tensor]


def _direction_terms(
    params: VelocityNet,
    video: torch.Tensor,
    caption_ids: torch.Tensor,
    direction: Direction,
    noise: NoiseStream,
    counter: tuple,
    codec: Codec,
    predict: Optional[Predictor],
) -> tuple[torch.Tensor, torch.Tensor]:
    target = codec.encode(video)
    endpoints = EndpointCondition.interpolation(
        codec.encode_frames(video[:, 0]), codec.encode_frames(video[:, -1]), target.shape[1]
    )
    t = noise.uniform((video.shape[0],), *counter, 0, dtype=video.dtype)
    eps = noise.normal(target.shape, *counter, 1, dtype=video.dtype)
    sample = FlowSample.draw(target, eps, t)
    cond = params.condition_batch(caption_ids, direction)
    v_hat = predict(sample, cond, endpoints) if predict is not None else params(sample.xt, t, cond, endpoints)

    x0_hat = recover_clean(sample.xt, v_hat, t)
    lat = F.mse_loss(x0_hat, target)
    # checked before decoding, which rejects non-finite latents without context
    if not torch.isfinite(lat):
        raise NumericError("non-finite loss", direction=direction.value, t=[round(float(x), 6) for x in t])
    pix = F.mse_loss(codec.decode(x0_hat, clamp=False), video)
    if not torch.isfinite(pix):
        raise NumericError("non-finite pixel loss", direction=direction.value, t=[round(float(x), 6) for x in t])
    return lat, pix


def bidirectional_loss(
    params: VelocityNet,
    clip,
    caption_ids,
    rng: NoiseStream,
    counter: tuple = (0,),
    codec: Codec | None = None,
    reverse_training: bool = True,
    tied_noise: bool = False,
    predict: Optional[Predictor] = None,
) -> LossBreakdown:
    """
    Four-term loss for a (B, L, C, H, W) clip batch with (B, L_p) caption ids.

    Each direction draws its own t and eps from `rng` at `counter`; with
    `tied_noise` both directions share one draw. `predict` replaces the
    network call (it receives the FlowSample, condition and endpoints).
    """
    codec = codec or Codec()
    video = as_tensor(clip, dtype=next(params.parameters()).dtype)
    ids = torch.as_tensor(caption_ids, dtype=torch.long)
    if video.ndim == 4:
        video = video.unsqueeze(0)
        ids = ids.reshape(1, -1)
    if video.ndim != 5 or ids.ndim != 2 or ids.shape[0] != video.shape[0]:
        raise ValidationError(
            f"expected clip (B,L,C,H,W) with (B,L_p) caption ids, got {tuple(video.shape)} and {tuple(ids.shape)}"
        )

    lat_fwd, pix_fwd = _direction_terms(params, video, ids, Direction.FORWARD, rng, (*counter, 0), codec, predict)
    if not reverse_training:
        zero = torch.zeros((), dtype=video.dtype)
        return LossBreakdown(lat_fwd, pix_fwd, zero, zero)
    bwd_counter = (*counter, 0) if tied_noise else (*counter, 1)
    lat_bwd, pix_bwd = _direction_terms(params, reverse(video), ids, Direction.BACKWARD, rng, bwd_counter, codec, predict)
    return LossBreakdown(lat_fwd, pix_fwd, lat_bwd, pix_bwd)


# ---------------------------------------------------------------- ablations
@dataclass(frozen=True)
class AblationBehavior:
    reverse_training: bool = True
    shared_direction_token: bool = False
    schedule: str = "curriculum"


def apply_ablation(config: TrainConfig, params: VelocityNet) -> tuple[AblationBehavior, VelocityNet]:
    behavior = {
        "none": AblationBehavior(),
        "no_reverse": AblationBehavior(reverse_training=False),
        "no_direction_tokens": AblationBehavior(shared_direction_token=True),
        "mixed_length": AblationBehavior(schedule="mixed_length"),
        "long_only": AblationBehavior(schedule="long_only"),
    }[config.ablation]
    if behavior.shared_direction_token:
        params = with_shared_token(params, True)
    return behavior, params


class LengthSchedule:
    """Step (1-indexed) -> (phase, clip length). Phase is 0 for mixed lengths."""

    def __init__(self, schedule: str, lengths: Tuple[int, int], phase1_steps: int, phase2_steps: int, seed: int = 0):
        if schedule not in ("curriculum", "mixed_length", "long_only"):
            raise ValidationError(f"unknown length schedule {schedule!r}")
        self.schedule = schedule
        self.short, self.long = lengths
        self.phase1_steps = phase1_steps
        self.phase2_steps = phase2_steps
        self.noise = NoiseStream(seed)

    @property
    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps

    def lengths_used(self) -> tuple[int, ...]:
        if self.schedule == "long_only":
            return (self.long,)
        return (self.short, self.long)

    def __call__(self, step: int) -> tuple[int, int]:
        if not 1 <= step <= self.total_steps:
            raise ValidationError(f"step {step} outside 1..{self.total_steps}")
        if self.schedule == "long_only":
            return 2, self.long
        if self.schedule == "mixed_length":
            pick = int(self.noise.rng(step, _TAG_LENGTH).integers(2))
            return 0, (self.short, self.long)[pick]
        return (1, self.short) if step <= self.phase1_steps else (2, self.long)


# ---------------------------------------------------------------- optimizer
def token_parameters(model: VelocityNet) -> List[torch.nn.Parameter]:
    return [p for p in (model.tau_fwd, model.tau_bwd) if p.requires_grad]


def build_optimizer(model: VelocityNet, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW with a token group at lr_tokens and every other trainable tensor at lr_adapters."""
    tokens = token_parameters(model)
    token_ids = {id(p) for p in tokens}
    rest = [p for p in model.parameters() if p.requires_grad and id(p) not in token_ids]
    groups = []
    if tokens:
        groups.append({"params": tokens, "lr": config.lr_tokens, "name": "tokens"})
    if rest:
        groups.append({"params": rest, "lr": config.lr_adapters, "name": "adapters"})
    if not groups:
        raise ValidationError("model has no trainable parameters")
    return torch.optim.AdamW(groups, weight_decay=config.weight_decay)


def prepare_model(model: VelocityNet, config: TrainConfig) -> tuple[AblationBehavior, VelocityNet]:
    """Apply the ablation and, for adapters_only, inject adapters and re-enable the direction tokens."""
    behavior, model = apply_ablation(config, model)
    if config.mode == "adapters_only":
        model = inject_adapters(model, config.lora_rank, config.lora_targets, seed=config.seed)
        model.tau_fwd.requires_grad_(True)
        model.tau_bwd.requires_grad_(True)
    return behavior, model


# ---------------------------------------------------------------- loop
@dataclass
class TrainResult:
    model: VelocityNet
    history: pd.DataFrame
    loss_curve: Path
    final_checkpoint: Path
    checkpoints: List[Path] = field(default_factory=list)


def _load_lengths(manifest: Manifest, lengths: tuple[int, ...]) -> dict:
    loaded = {}
    for length in lengths:
        if not manifest.has_length(length):
            raise ValidationError(f"dataset {manifest.path} has no {length}-frame clips (lengths {manifest.lengths})")
        videos, captions = manifest.clips(length)
        loaded[length] = (torch.from_numpy(videos), torch.from_numpy(captions))
    return loaded


def run_curriculum(
    config: TrainConfig,
    manifest: Manifest,
    params: VelocityNet,
    out_dir: str | Path,
    codec: Codec | None = None,
    extra: dict | None = None,
    progress: bool = True,
) -> TrainResult:
    """
    Train for phase1_steps + phase2_steps and write loss_curve.csv,
    checkpoints/step_XXXXXX.ckpt and final.ckpt under out_dir.

    `extra` sections are stored next to TrainConfig in every checkpoint sidecar.
    """
    codec = codec or Codec()
    if tuple(config.lengths) != tuple(manifest.lengths):
        logger.warning("train lengths %s differ from dataset lengths %s", config.lengths, manifest.lengths)
    behavior, model = prepare_model(params, config)
    schedule = LengthSchedule(behavior.schedule, config.lengths, config.phase1_steps, config.phase2_steps, config.seed)
    data = _load_lengths(manifest, schedule.lengths_used())

    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    curve = out / "loss_curve.csv"
    if curve.exists():
        curve.unlink()

    noise = NoiseStream(config.seed)
    optimizer = build_optimizer(model, config)
    trainable = [p for p in model.parameters() if p.requires_grad]
    sidecar = {"train": config.to_dict(), **(extra or {})}
    dtype = next(model.parameters()).dtype
    rows: list[dict] = []
    checkpoints: list[Path] = []

    model.train()
    bar = tqdm(range(1, schedule.total_steps + 1), desc=f"train[{config.ablation}]", disable=not progress)
    for step in bar:
        phase, length = schedule(step)
        videos, captions = data[length]
        n = videos.shape[0]
        idx = noise.rng(step, _TAG_BATCH).choice(n, size=config.batch, replace=n < config.batch)
        idx = torch.from_numpy(np.sort(idx))

        loss = bidirectional_loss(
            model,
            videos[idx].to(dtype),
            captions[idx],
            noise,
            counter=(step,),
            codec=codec,
            reverse_training=behavior.reverse_training,
            tied_noise=config.tied_noise,
        )
        optimizer.zero_grad(set_to_none=True)
        loss.total.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(trainable, config.grad_clip)
        optimizer.step()

        if step % config.log_every == 0 or step == schedule.total_steps:
            row = {"step": step, "phase": phase, "length": length, **loss.to_dict()}
            append_csv_row(curve, row, LOSS_COLUMNS)
            rows.append(row)
            bar.set_postfix(total=f"{row['total']:.4f}", L=length)
        if step % config.checkpoint_every == 0:
            path = ckpt_dir / f"step_{step:06d}.ckpt"
            save_model(model, path, sidecar)
            checkpoints.append(path)

    final = save_model(model, out / "final.ckpt", sidecar)
    history = pd.DataFrame(rows, columns=LOSS_COLUMNS)
    if not history.empty:
        logger.info(
            "training done: %d steps, total loss %.4f -> %.4f",
            schedule.total_steps, history["total"].iloc[0], history["total"].iloc[-1],
        )
    return TrainResult(model=model, history=history, loss_curve=curve, final_checkpoint=final, checkpoints=checkpoints)


@torch.no_grad()
def validation_loss(
    model: VelocityNet,
    clips,
    captions,
    seed: int = 0,
    codec: Codec | None = None,
    reverse_training: bool = True,
    batch: int = 16,
) -> float:
    """Mean total loss over a clip set with noise fixed by `seed`, for comparing runs."""
    videos = as_tensor(clips, dtype=next(model.parameters()).dtype)
    ids = torch.as_tensor(captions, dtype=torch.long)
    noise = NoiseStream(seed)
    totals, weights = [], []
    for start in range(0, videos.shape[0], batch):
        chunk = slice(start, start + batch)
        loss = bidirectional_loss(
            model, videos[chunk], ids[chunk], noise, counter=(start,), codec=codec, reverse_training=reverse_training
        )
        totals.append(float(loss.total))
        weights.append(videos[chunk].shape[0])
    return float(np.average(totals, weights=weights))
