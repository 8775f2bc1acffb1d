"""Procedural sprite videos with temporally asymmetric motion.

A scene is one anti-aliased sprite moving between two normalized positions
along one of five trajectory classes. Every clip is a pure function of its
SceneSpec and frame count, so a short and a long rendering of the same scene
share their first and last frames bit for bit.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import torch

from cycflow.codec import Codec
from cycflow.config import section_from_dict, section_to_dict
from cycflow.errors import StorageError, ValidationError, VocabularyError
from utils.io import load_tensor, read_json, save_tensor, write_json

logger = logging.getLogger(__name__)

TRAJECTORY_CLASSES = ("linear", "accelerate", "decelerate", "sine", "circular")
SPRITES = ("disc", "square")
CAPTION_VOCAB = TRAJECTORY_CLASSES + SPRITES

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    count: int = 64
    test_count: int = 15
    lengths: Tuple[int, int] = (9, 17)
    seed: int = 0
    frame_size: int = 16
    channels: int = 1
    temporal_compression: int = 1
    classes: Tuple[str, ...] = TRAJECTORY_CLASSES
    test_classes: Tuple[str, ...] = ("accelerate",)
    workers: int = 1

    def __post_init__(self):
        if len(self.lengths) != 2 or min(self.lengths) < 2:
            raise ValidationError(f"lengths must be (short, long) with both >= 2, got {self.lengths}")
        if self.frame_size % 2:
            raise ValidationError(f"frame size must be even, got {self.frame_size}")
        for c in (*self.classes, *self.test_classes):
            if c not in TRAJECTORY_CLASSES:
                raise ValidationError(f"unknown trajectory class {c!r}")

    @classmethod
    def from_dict(cls, values: dict) -> "DataConfig":
        return section_from_dict(cls, values, "data")

    def to_dict(self) -> dict:
        return section_to_dict(self)

    def codec(self) -> Codec:
        return Codec(spatial=2, temporal=self.temporal_compression)


def caption_ids_for(trajectory_class: str, sprite: str) -> list[int]:
    return [CAPTION_VOCAB.index(trajectory_class), CAPTION_VOCAB.index(sprite)]


def parse_caption(text: str) -> list[int]:
    """'accelerate,disc' -> ids; unknown words raise."""
    words = [w.strip().lower() for w in text.replace(" ", ",").split(",") if w.strip()]
    unknown = [w for w in words if w not in CAPTION_VOCAB]
    if unknown:
        raise VocabularyError(f"unknown caption words {unknown}; vocabulary is {list(CAPTION_VOCAB)}")
    return [CAPTION_VOCAB.index(w) for w in words]


@dataclass(frozen=True)
class SceneSpec:
    sprite: str
    trajectory_class: str
    start_pos: Tuple[float, float]
    end_pos: Tuple[float, float]
    sprite_radius: float
    intensity: float
    seed: int

    def __post_init__(self):
        if self.sprite not in SPRITES:
            raise ValidationError(f"unknown sprite {self.sprite!r}; expected one of {SPRITES}")
        if self.trajectory_class not in TRAJECTORY_CLASSES:
            raise ValidationError(f"unknown trajectory class {self.trajectory_class!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValidationError(f"intensity must lie in [0,1], got {self.intensity}")
        if self.sprite_radius <= 0:
            raise ValidationError(f"sprite radius must be positive, got {self.sprite_radius}")

    @property
    def caption_ids(self) -> list[int]:
        return caption_ids_for(self.trajectory_class, self.sprite)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_pos"] = list(self.start_pos)
        d["end_pos"] = list(self.end_pos)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["start_pos"] = tuple(d["start_pos"])
        d["end_pos"] = tuple(d["end_pos"])
        return cls(**d)


@dataclass
class ClipPair:
    short: np.ndarray
    long: np.ndarray
    caption_ids: List[int]
    spec: SceneSpec


# ---------------------------------------------------------------- trajectories
def _shape_params(seed: int) -> tuple[float, float]:
    """Seed-derived (magnitude in [0,1), sign) for the sine amplitude and the arc angle."""
    rng = np.random.default_rng(seed)
    magnitude = float(rng.random())
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return magnitude, sign


def trajectory_point(spec: SceneSpec, u: float) -> np.ndarray:
    """Normalized (x, y) sprite center at progress u."""
    if not 0.0 <= u <= 1.0:
        raise ValidationError(f"u must lie in [0,1], got {u}")
    s = np.asarray(spec.start_pos, dtype=np.float64)
    e = np.asarray(spec.end_pos, dtype=np.float64)
    chord = e - s
    perp = np.array([-chord[1], chord[0]])
    kind = spec.trajectory_class

    if kind == "linear":
        return s + chord * u
    if kind == "accelerate":
        return s + chord * (u * u)
    if kind == "decelerate":
        return s + chord * (1.0 - (1.0 - u) ** 2)

    magnitude, sign = _shape_params(spec.seed)
    if kind == "sine":
        amplitude = sign * (0.15 + 0.1 * magnitude)
        return s + chord * u + perp * amplitude * math.sin(2.0 * math.pi * u)

    # circular: arc through both endpoints subtending `theta`
    if u == 0.0:
        return s
    if u == 1.0:
        return e
    theta = sign * (0.5 * math.pi + 0.25 * math.pi * magnitude)
    half = np.linalg.norm(chord) / 2.0
    if half == 0.0:
        return s
    radius = half / math.sin(abs(theta) / 2.0)
    offset = math.sqrt(max(radius * radius - half * half, 0.0))
    unit_perp = perp / np.linalg.norm(perp)
    center = (s + e) / 2.0 + math.copysign(1.0, theta) * offset * unit_perp
    rs, re = s - center, e - center
    start_angle = math.atan2(rs[1], rs[0])
    sweep = math.atan2(rs[0] * re[1] - rs[1] * re[0], rs[0] * re[0] + rs[1] * re[1])
    angle = start_angle + sweep * u
    return center + radius * np.array([math.cos(angle), math.sin(angle)])


def stays_inside(spec: SceneSpec, frame_size: int, samples: int = 129) -> bool:
    reach = (spec.sprite_radius + 0.5) / frame_size
    for u in np.linspace(0.0, 1.0, samples):
        x, y = trajectory_point(spec, float(u))
        if x - reach < 0 or x + reach > 1 or y - reach < 0 or y + reach > 1:
            return False
    return True


def render_frame(spec: SceneSpec, u: float, frame_size: int = 16, channels: int = 1) -> np.ndarray:
    """(C, H, W) float32 frame with anti-aliased sprite coverage scaled by intensity."""
    cx, cy = trajectory_point(spec, u) * frame_size
    centers = np.arange(frame_size, dtype=np.float64) + 0.5
    dx = centers[None, :] - cx
    dy = centers[:, None] - cy
    r = spec.sprite_radius
    if spec.sprite == "disc":
        coverage = np.clip(r + 0.5 - np.sqrt(dx * dx + dy * dy), 0.0, 1.0)
    else:
        coverage = np.clip(r + 0.5 - np.abs(dx), 0.0, 1.0) * np.clip(r + 0.5 - np.abs(dy), 0.0, 1.0)
    frame = (spec.intensity * coverage).astype(np.float32)
    return np.repeat(frame[None], channels, axis=0)


def render_clip(spec: SceneSpec, frames: int, frame_size: int = 16, channels: int = 1) -> np.ndarray:
    if frames < 2:
        raise ValidationError(f"a clip needs at least 2 frames, got {frames}")
    return np.stack([render_frame(spec, i / (frames - 1), frame_size, channels) for i in range(frames)])


def sample_multirate(spec: SceneSpec, L_short: int, L_long: int, frame_size: int = 16, channels: int = 1) -> ClipPair:
    if L_short < 2 or L_long < 2:
        raise ValidationError(f"clip lengths must be >= 2, got short={L_short} long={L_long}")
    return ClipPair(
        short=render_clip(spec, L_short, frame_size, channels),
        long=render_clip(spec, L_long, frame_size, channels),
        caption_ids=spec.caption_ids,
        spec=spec,
    )


def reverse(video):
    """Invert frame order of (L,C,H,W) or (B,L,C,H,W) arrays/tensors; pixels untouched."""
    if isinstance(video, torch.Tensor):
        return video.flip(-4)
    return np.flip(np.asarray(video), axis=-4).copy()


def random_scene(rng: np.random.Generator, trajectory_class: str, frame_size: int = 16, sprite: str | None = None) -> SceneSpec:
    """Draw a scene whose sprite stays inside the frame for its whole trajectory."""
    sprite = sprite or SPRITES[int(rng.integers(len(SPRITES)))]
    radius = float(rng.uniform(1.5, 2.5)) * frame_size / 16.0
    intensity = float(rng.uniform(0.6, 1.0))
    for _ in range(200):
        start = rng.uniform(0.2, 0.8, size=2)
        end = rng.uniform(0.2, 0.8, size=2)
        if np.linalg.norm(end - start) < 0.3:
            continue
        spec = SceneSpec(
            sprite=sprite,
            trajectory_class=trajectory_class,
            start_pos=(round(float(start[0]), 6), round(float(start[1]), 6)),
            end_pos=(round(float(end[0]), 6), round(float(end[1]), 6)),
            sprite_radius=round(radius, 6),
            intensity=round(intensity, 6),
            seed=int(rng.integers(2**31 - 1)),
        )
        if stays_inside(spec, frame_size):
            return spec
    raise ValidationError(f"could not place a {trajectory_class} trajectory inside a {frame_size}px frame")


# ---------------------------------------------------------------- datasets
@dataclass
class ManifestEntry:
    clip_id: str
    spec: SceneSpec
    caption_ids: List[int]
    short_path: str
    long_path: str
    lengths: Tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "spec": self.spec.to_dict(),
            "caption_ids": list(self.caption_ids),
            "short_path": self.short_path,
            "long_path": self.long_path,
            "lengths": {"short": self.lengths[0], "long": self.lengths[1]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            clip_id=d["clip_id"],
            spec=SceneSpec.from_dict(d["spec"]),
            caption_ids=list(d["caption_ids"]),
            short_path=d["short_path"],
            long_path=d["long_path"],
            lengths=(int(d["lengths"]["short"]), int(d["lengths"]["long"])),
        )


@dataclass
class Manifest:
    root: Path
    seed: int
    lengths: Tuple[int, int]
    frame_size: int
    channels: int
    entries: List[ManifestEntry] = field(default_factory=list)
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "lengths": list(self.lengths),
            "frame_size": self.frame_size,
            "channels": self.channels,
            "vocab": list(CAPTION_VOCAB),
            "clips": [e.to_dict() for e in self.entries],
        }

    def class_histogram(self) -> dict:
        hist: dict = {}
        for e in self.entries:
            hist[e.spec.trajectory_class] = hist.get(e.spec.trajectory_class, 0) + 1
        return hist

    def has_length(self, length: int) -> bool:
        return length in self.lengths

    def load_clip(self, entry: ManifestEntry, length: int) -> np.ndarray:
        if length == entry.lengths[0]:
            rel = entry.short_path
        elif length == entry.lengths[1]:
            rel = entry.long_path
        else:
            raise ValidationError(f"clip {entry.clip_id} has no {length}-frame rendering (lengths {entry.lengths})")
        return load_tensor(self.root / rel)

    def clips(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        """All clips of one length as a (N, L, C, H, W) array plus (N, L_p) caption ids."""
        if not self.has_length(length):
            raise ValidationError(f"dataset has no {length}-frame clips (lengths {self.lengths})")
        videos = np.stack([self.load_clip(e, length) for e in self.entries])
        captions = np.asarray([e.caption_ids for e in self.entries], dtype=np.int64)
        return videos, captions

    def subset(self, trajectory_class: str) -> "Manifest":
        entries = [e for e in self.entries if e.spec.trajectory_class == trajectory_class]
        return Manifest(self.root, self.seed, self.lengths, self.frame_size, self.channels, entries, self.path)


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise StorageError("manifest not found", path)
    d = read_json(path)
    return Manifest(
        root=path.parent,
        seed=int(d["seed"]),
        lengths=tuple(d["lengths"]),
        frame_size=int(d["frame_size"]),
        channels=int(d["channels"]),
        entries=[ManifestEntry.from_dict(c) for c in d["clips"]],
        path=path,
    )


def _build_clip(index: int, seed: int, classes: Sequence[str], lengths, frame_size: int, channels: int, clip_dir: Path, root: Path) -> ManifestEntry:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    spec = random_scene(rng, classes[index % len(classes)], frame_size)
    pair = sample_multirate(spec, lengths[0], lengths[1], frame_size, channels)
    clip_id = f"clip_{index:05d}"
    short_path = clip_dir / f"{clip_id}_short.cyc"
    long_path = clip_dir / f"{clip_id}_long.cyc"
    save_tensor(short_path, pair.short)
    save_tensor(long_path, pair.long)
    return ManifestEntry(
        clip_id=clip_id,
        spec=spec,
        caption_ids=pair.caption_ids,
        short_path=short_path.relative_to(root).as_posix(),
        long_path=long_path.relative_to(root).as_posix(),
        lengths=(lengths[0], lengths[1]),
    )


def generate_dataset(
    count: int,
    lengths: Tuple[int, int],
    seed: int,
    out_dir: str | Path,
    frame_size: int = 16,
    channels: int = 1,
    classes: Sequence[str] | None = None,
    manifest_name: str = "manifest.json",
    workers: int = 1,
) -> Manifest:
    """
    Render `count` multi-rate clip pairs into out_dir/clips and write a manifest.

    Classes are assigned round-robin; each clip seeds itself from
    (seed, clip index), so any worker count produces the same bytes.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if min(lengths) < 2:
        raise ValidationError(f"clip lengths must be >= 2, got {tuple(lengths)}")
    if frame_size % 2:
        raise ValidationError(f"frame size must be even, got {frame_size}")
    classes = tuple(classes or TRAJECTORY_CLASSES)
    for c in classes:
        if c not in TRAJECTORY_CLASSES:
            raise ValidationError(f"unknown trajectory class {c!r}")

    root = Path(out_dir)
    clip_dir = root / "clips"
    try:
        clip_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create dataset directory: {exc.strerror}", clip_dir) from exc

    build = lambda i: _build_clip(i, seed, classes, lengths, frame_size, channels, clip_dir, root)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(build, range(count)))
    else:
        entries = [build(i) for i in range(count)]

    manifest = Manifest(root, seed, (lengths[0], lengths[1]), frame_size, channels, entries, root / manifest_name)
    write_json(manifest.path, manifest.to_dict())
    logger.info("wrote %d clip pairs (%s) to %s", count, manifest.class_histogram(), root)
    return manifest
