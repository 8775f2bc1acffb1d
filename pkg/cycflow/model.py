"""Direction-conditioned velocity network.

A compact spatiotemporal transformer: endpoint channels are concatenated to
the noisy latent, every latent frame is cut into p x p patches, and all
patches of all frames attend to each other. Each block then cross-attends to
the condition sequence, whose first row is the directional token.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn

from cycflow.errors import DimensionError, NumericError, ValidationError, VocabularyError
from cycflow.flowmatch import EndpointCondition

logger = logging.getLogger(__name__)

# floor on t inside the clean view; x_t - t v stays finite at t = 0
MIN_TIME = 1e-6


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    @classmethod
    def parse(cls, value) -> "Direction":
        if isinstance(value, cls):
            return value
        aliases = {"fwd": cls.FORWARD, "bwd": cls.BACKWARD}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown direction {value!r}; expected forward or backward") from None

    def flipped(self) -> "Direction":
        return Direction.BACKWARD if self is Direction.FORWARD else Direction.FORWARD


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 1
    latent_size: int = 8
    patch: int = 2
    d_hidden: int = 64
    blocks: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    vocab_size: int = 7
    max_latent_frames: int = 80
    shared_direction_token: bool = False
    clean_skip: bool = True

    def __post_init__(self):
        if self.latent_size % self.patch:
            raise DimensionError(f"latent size {self.latent_size} is not divisible by patch {self.patch}")
        if self.d_hidden % self.heads:
            raise ValidationError(f"d_hidden {self.d_hidden} is not divisible by heads {self.heads}")
        if self.d_hidden % 2:
            raise ValidationError("d_hidden must be even for the sinusoidal time embedding")

    @property
    def in_channels(self) -> int:
        # latent + start broadcast + end broadcast + mask
        return 3 * self.latent_channels + 1

    @property
    def grid(self) -> int:
        return self.latent_size // self.patch

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_census(config: ModelConfig) -> int:
    """Exact parameter count implied by a ModelConfig (without adapters)."""
    d, c, p = config.d_hidden, config.latent_channels, config.patch
    hidden = config.mlp_ratio * d
    linear = lambda i, o: i * o + o  # noqa: E731
    per_block = (
        3 * 2 * d                      # three LayerNorms
        + 8 * linear(d, d)             # self- and cross-attention q, k, v, o
        + linear(d, hidden) + linear(hidden, d)
    )
    return (
        config.vocab_size * d          # caption table
        + 2 * d                        # tau_fwd, tau_bwd
        + linear(config.in_channels * p * p, d)
        + config.grid * config.grid * d
        + config.max_latent_frames * d
        + 2 * linear(d, d)             # time embedding projection
        + config.blocks * per_block
        + 2 * d                        # final norm
        + linear(d, c * p * p)
        + (linear(d, c) if config.clean_skip else 0)  # skip gain
    )


@dataclass
class ConditionSequence:
    """tau_d prepended to caption embeddings: (L_p + 1, d) or batched (B, L_p + 1, d)."""

    tokens: torch.Tensor
    direction: Direction

    @property
    def rows(self) -> int:
        return int(self.tokens.shape[-2])


# ---------------------------------------------------------------- layers
def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    args = (1000.0 * t)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        context = x if context is None else context
        B, N, D = x.shape
        M = context.shape[1]
        H = self.heads
        q = self.q(x).view(B, N, H, D // H).transpose(1, 2)
        k = self.k(context).view(B, M, H, D // H).transpose(1, 2)
        v = self.v(context).view(B, M, H, D // H).transpose(1, 2)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, D)
        return self.o(out)


class Block(nn.Module):
    """Self-attention over all spatiotemporal tokens, cross-attention to the condition, MLP."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), context)
        return x + self.mlp(self.norm3(x))


# ---------------------------------------------------------------- network
class VelocityNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, p = config.d_hidden, config.patch

        self.caption_embedding = nn.Embedding(config.vocab_size, d)
        nn.init.normal_(self.caption_embedding.weight, std=0.02)
        self.tau_fwd = nn.Parameter(torch.randn(d) * 0.02)
        self.tau_bwd = nn.Parameter(torch.randn(d) * 0.02)

        self.patch_embed = nn.Linear(config.in_channels * p * p, d)
        self.spatial_pos = nn.Parameter(torch.randn(config.grid * config.grid, d) * 0.02)
        self.temporal_pos = nn.Parameter(torch.randn(config.max_latent_frames, d) * 0.02)
        self.time_embedding = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))

        self.blocks = nn.ModuleList(Block(d, config.heads, config.mlp_ratio) for _ in range(config.blocks))
        self.final_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.latent_channels * p * p)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        if config.clean_skip:
            # per-channel gain on x_t, a function of t; zero keeps v = 0 at init
            self.skip_gain = nn.Linear(d, config.latent_channels)
            nn.init.zeros_(self.skip_gain.weight)
            nn.init.zeros_(self.skip_gain.bias)

    # ---- conditioning ----
    def direction_token(self, direction) -> torch.Tensor:
        direction = Direction.parse(direction)
        if direction is Direction.FORWARD or self.config.shared_direction_token:
            return self.tau_fwd
        return self.tau_bwd

    def _caption_tensor(self, caption_ids) -> torch.Tensor:
        ids = torch.as_tensor(caption_ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            bad = [int(i) for i in ids.flatten() if i < 0 or i >= self.config.vocab_size]
            raise VocabularyError(f"caption ids {bad} outside vocabulary of size {self.config.vocab_size}")
        return ids

    def build_condition(self, caption_ids: Sequence[int], direction) -> ConditionSequence:
        ids = self._caption_tensor(list(caption_ids)).reshape(-1)
        tau = self.direction_token(direction).unsqueeze(0)
        text = self.caption_embedding(ids)
        return ConditionSequence(torch.cat([tau, text], dim=0), Direction.parse(direction))

    def condition_batch(self, caption_ids, direction) -> ConditionSequence:
        """Batched conditions from a (B, L_p) id matrix; all captions share one length."""
        ids = self._caption_tensor(caption_ids)
        if ids.ndim != 2:
            raise DimensionError(f"batched caption ids must be (B, L_p), got {tuple(ids.shape)}")
        tau = self.direction_token(direction).expand(ids.shape[0], 1, -1)
        text = self.caption_embedding(ids)
        return ConditionSequence(torch.cat([tau, text], dim=1), Direction.parse(direction))

    # ---- patches ----
    def _patchify(self, x: torch.Tensor) -> torch.Tensor:
        B, l, C, h, w = x.shape
        p = self.config.patch
        x = x.reshape(B, l, C, h // p, p, w // p, p).permute(0, 1, 3, 5, 2, 4, 6)
        return x.reshape(B, l * (h // p) * (w // p), C * p * p)

    def _unpatchify(self, tokens: torch.Tensor, l: int) -> torch.Tensor:
        B = tokens.shape[0]
        p, g, c = self.config.patch, self.config.grid, self.config.latent_channels
        x = tokens.reshape(B, l, g, g, c, p, p).permute(0, 1, 4, 2, 5, 3, 6)
        return x.reshape(B, l, c, g * p, g * p)

    def _check_latent(self, xt: torch.Tensor, endpoints: EndpointCondition) -> None:
        cfg = self.config
        _, l, c, h, w = xt.shape
        if c != cfg.latent_channels or h != cfg.latent_size or w != cfg.latent_size:
            raise DimensionError(
                f"latent frames must be {cfg.latent_channels}x{cfg.latent_size}x{cfg.latent_size}, got {c}x{h}x{w}"
            )
        if l > cfg.max_latent_frames:
            raise DimensionError(f"{l} latent frames exceed max_latent_frames={cfg.max_latent_frames}")
        if endpoints.length != l:
            raise DimensionError(f"endpoint mask covers {endpoints.length} frames, latent has {l}")

    def forward(self, xt, t, cond: ConditionSequence, endpoints: EndpointCondition) -> torch.Tensor:
        xt = torch.as_tensor(xt)
        unbatched = xt.ndim == 4
        if unbatched:
            xt = xt.unsqueeze(0)
        if xt.ndim != 5:
            raise DimensionError(f"latent must be (l,c,h,w) or (B,l,c,h,w), got {tuple(xt.shape)}")
        self._check_latent(xt, endpoints)
        B, l = xt.shape[:2]

        t = torch.as_tensor(t, dtype=xt.dtype)
        t = t.expand(B) if t.ndim == 0 else t.reshape(B)
        ends = endpoints.channels().to(xt.dtype)
        if ends.ndim == 4:
            ends = ends.unsqueeze(0)
        ends = ends.expand(B, *ends.shape[1:])
        context = cond.tokens if cond.tokens.ndim == 3 else cond.tokens.unsqueeze(0)
        context = context.expand(B, *context.shape[1:]).to(xt.dtype)

        x = self.patch_embed(self._patchify(torch.cat([xt, ends], dim=2)))
        pos = self.temporal_pos[:l, None, :] + self.spatial_pos[None, :, :]
        x = x + pos.reshape(1, -1, self.config.d_hidden)
        temb = self.time_embedding(timestep_embedding(t, self.config.d_hidden))
        x = x + temb[:, None, :]

        for i, block in enumerate(self.blocks):
            x = block(x, context)
            if not torch.isfinite(x).all():
                raise NumericError("non-finite activations", block=f"blocks.{i}")

        v = self._unpatchify(self.head(self.final_norm(x)), l)
        if self.config.clean_skip:
            v = self._clean_view(v, xt, t, temb)
        return v[0] if unbatched else v

    def _clean_view(self, out: torch.Tensor, xt: torch.Tensor, t: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        """
        v = (g(t) x_t + out) / t, so x_t - t v = (1 - g) x_t - out.

        With g -> 1 the head predicts the clean latent directly and the
        recovered x0 carries no copy of the noise at small t. The gain and the
        head both start at zero, so an untrained model still returns v = 0.
        """
        gain = self.skip_gain(temb)[:, None, :, None, None]
        scale = t.clamp_min(MIN_TIME).view(-1, 1, 1, 1, 1)
        return (gain * xt + out) / scale


def build_condition(caption_ids: Sequence[int], direction, params: VelocityNet) -> ConditionSequence:
    return params.build_condition(caption_ids, direction)


def forward_velocity(params: VelocityNet, xt, t, cond: ConditionSequence, endpoints: EndpointCondition) -> torch.Tensor:
    return params(xt, t, cond, endpoints)


# ---------------------------------------------------------------- checkpoints
def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def model_records(model: VelocityNet) -> dict:
    return {name: tensor.detach().cpu().float().numpy() for name, tensor in model.state_dict().items()}


def save_model(model: VelocityNet, path: str | Path, extra: dict | None = None) -> Path:
    """Write the binary checkpoint plus a JSON sidecar holding ModelConfig and `extra` sections."""
    from utils.io import save_records, write_json

    path = Path(path)
    save_records(path, model_records(model))
    payload = {"model": model.config.to_dict()}
    payload.update(extra or {})
    write_json(sidecar_path(path), payload)
    return path


def load_model(path: str | Path, config: ModelConfig | None = None) -> VelocityNet:
    """Rebuild a model from a checkpoint, re-injecting adapters when adapter records are present."""
    from cycflow.lora import adapter_census, inject_adapters
    from utils.io import load_records, read_json

    path = Path(path)
    records = load_records(path)
    if config is None:
        side = sidecar_path(path)
        if not side.exists():
            raise ValidationError(f"no ModelConfig given and no sidecar {side} next to the checkpoint")
        config = ModelConfig.from_dict(read_json(side)["model"])

    model = VelocityNet(config)
    lora_names = sorted(n for n in records if n.endswith(".lora_A"))
    if lora_names:
        rank = int(records[lora_names[0]].shape[0])
        targets = sorted({".".join(n.split(".")[2:4]) for n in lora_names})
        model = inject_adapters(model, rank, targets, copy=False)

    expected = dict(model.state_dict())
    missing = sorted(set(expected) - set(records))
    unexpected = sorted(set(records) - set(expected))
    if missing or unexpected:
        raise ValidationError(f"checkpoint {path} does not match ModelConfig: missing={missing} unexpected={unexpected}")
    for name, value in records.items():
        if tuple(value.shape) != tuple(expected[name].shape):
            raise ValidationError(f"record {name} has shape {value.shape}, expected {tuple(expected[name].shape)}")

    census = sum(int(v.size) for v in records.values())
    expected_census = parameter_census(config) + adapter_census(model)
    if census != expected_census:
        raise ValidationError(f"checkpoint census {census} != ModelConfig census {expected_census}")

    state = {name: torch.from_numpy(value.copy()) for name, value in records.items()}
    model.load_state_dict(state)
    logger.info("loaded %s (%d parameters%s)", path, census, f", adapter rank {rank}" if lora_names else "")
    return model


def with_shared_token(model: VelocityNet, shared: bool = True) -> VelocityNet:
    model.config = replace(model.config, shared_direction_token=shared)
    return model
