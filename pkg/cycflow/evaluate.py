"""Evaluation suite over a test manifest.

Per clip: boundary alignment, cycle consistency, dynamic degree, motion
smoothness and temporal flicker. Over the set: a Frechet proxy between
generated and ground-truth clip features. Subject consistency and aesthetic
quality need pretrained feature extractors and are not measured.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from tqdm.auto import tqdm

from cycflow.codec import Codec
from cycflow.config import section_from_dict, section_to_dict
from cycflow.data import Manifest, reverse
from cycflow.errors import CycflowError, ValidationError
from cycflow.inference import interpolate
from cycflow.metrics import (
    boundary_error,
    clip_features,
    dynamic_degree,
    frechet_proxy,
    motion_smoothness,
    mse,
    temporal_flicker,
)
from cycflow.model import Direction, VelocityNet
from utils.io import write_csv, write_json

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["boundary_first", "boundary_last", "cycle_error", "dynamic_degree", "smoothness", "flicker"]
REPORT_COLUMNS = ["clip_id", *METRIC_COLUMNS]
UNCOVERED_DIMENSIONS = ("subject_consistency", "aesthetic_quality")

# (start, end, caption_ids, direction, seed) -> (L, C, H, W) video
Generator = Callable[[np.ndarray, np.ndarray, Sequence[int], Direction, int], np.ndarray]


@dataclass(frozen=True)
class EvalConfig:
    steps: int = 16
    seed: int = 0
    clamp_endpoints: bool = False
    length: int = 0
    cycle: bool = True
    seeds: tuple = (0, 1, 2)
    workers: int = 1

    @classmethod
    def from_dict(cls, values: dict) -> "EvalConfig":
        return section_from_dict(cls, values, "eval")

    def to_dict(self) -> dict:
        return section_to_dict(self)


@dataclass
class MetricsReport:
    rows: pd.DataFrame
    frechet: float
    failures: List[tuple] = field(default_factory=list)
    config_hash: str | None = None

    @property
    def aggregate(self) -> dict:
        return {c: float(self.rows[c].mean()) for c in METRIC_COLUMNS}

    def table(self) -> pd.DataFrame:
        """Per-clip rows followed by the `aggregate` row."""
        agg = pd.DataFrame([{"clip_id": "aggregate", **self.aggregate}], columns=REPORT_COLUMNS)
        return pd.concat([self.rows[REPORT_COLUMNS], agg], ignore_index=True)

    def summary(self) -> dict:
        return {
            **self.aggregate,
            "frechet": self.frechet,
            "clips": int(len(self.rows)),
            "failures": len(self.failures),
            "config_hash": self.config_hash,
            "uncovered_dimensions": list(UNCOVERED_DIMENSIONS),
        }

    def validate(self) -> None:
        values = [*self.rows[METRIC_COLUMNS].to_numpy().ravel(), self.frechet]
        bad = [v for v in values if not math.isfinite(v) or v < 0]
        if bad:
            raise ValidationError(f"metrics report holds {len(bad)} non-finite or negative entries")


# ---------------------------------------------------------------- generators
def model_generator(model: VelocityNet, codec: Codec, frames: int, steps: int, clamp: bool = False) -> Generator:
    def generate(start, end, caption_ids, direction, seed):
        video = interpolate(model, codec, start, end, caption_ids, direction, frames, steps, seed, clamp)
        return video.detach().cpu().numpy()

    return generate


def cycle_error_from(generate: Generator, I1, IL, caption_ids, seed: int, first_direction="forward") -> float:
    first = Direction.parse(first_direction)
    v_f = generate(I1, IL, caption_ids, first, seed)
    v_b = generate(IL, I1, caption_ids, first.flipped(), seed)
    return mse(v_f, reverse(np.asarray(v_b)))


def cycle_consistency_error(
    params: VelocityNet,
    I1,
    IL,
    caption_ids,
    steps: int,
    seed: int,
    codec: Codec | None = None,
    frames: int = 17,
    first_direction="forward",
) -> float:
    """MSE between the forward clip I1 -> IL and the reversed backward clip IL -> I1, same seed."""
    generate = model_generator(params, codec or Codec(), frames, steps)
    return cycle_error_from(generate, I1, IL, caption_ids, seed, first_direction)


@dataclass
class DirectionProbe:
    reversed_corr: float
    plain_corr: float

    @property
    def margin(self) -> float:
        return self.reversed_corr - self.plain_corr


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a).astype(np.float64), np.ravel(b).astype(np.float64)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def direction_probe(generate: Generator, I1, IL, caption_ids, seed: int) -> DirectionProbe:
    """corr(V_fwd, reverse(V_bwd)) against corr(V_fwd, V_bwd)."""
    v_f = generate(I1, IL, caption_ids, Direction.FORWARD, seed)
    v_b = np.asarray(generate(IL, I1, caption_ids, Direction.BACKWARD, seed))
    return DirectionProbe(_corr(v_f, reverse(v_b)), _corr(v_f, v_b))


# ---------------------------------------------------------------- suite
def clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _evaluate_clip(generate: Generator, entry, truth: np.ndarray, seed: int, cycle: bool):
    I1, IL = truth[0], truth[-1]
    gen = np.asarray(generate(I1, IL, entry.caption_ids, Direction.FORWARD, seed))
    first, last = boundary_error(gen, I1, IL)
    row = {
        "clip_id": entry.clip_id,
        "boundary_first": first,
        "boundary_last": last,
        "cycle_error": cycle_error_from(generate, I1, IL, entry.caption_ids, seed) if cycle else 0.0,
        "dynamic_degree": dynamic_degree(gen),
        "smoothness": motion_smoothness(gen),
        "flicker": temporal_flicker(gen),
    }
    return row, clip_features(gen), clip_features(truth)


def evaluate_suite(
    params: Optional[VelocityNet],
    test_manifest: Manifest,
    config: EvalConfig,
    out_dir: str | Path | None = None,
    codec: Codec | None = None,
    generator: Optional[Generator] = None,
    config_hash: str | None = None,
    progress: bool = True,
) -> MetricsReport:
    """
    Sample every test clip from its own endpoints and caption and score it.

    Clip failures are logged and collected; the suite fails only when fewer
    than two clips survive, since the Frechet proxy needs two per set.
    Writes metrics.csv and summary.json when `out_dir` is given.
    """
    codec = codec or Codec()
    length = config.length or test_manifest.lengths[1]
    if generator is None:
        if params is None:
            raise ValidationError("evaluate_suite needs a model or a generator")
        generator = model_generator(params, codec, length, config.steps, config.clamp_endpoints)

    def run(item):
        index, entry = item
        try:
            truth = test_manifest.load_clip(entry, length)
            return _evaluate_clip(generator, entry, truth, clip_seed(config.seed, index), config.cycle)
        except (CycflowError, OSError) as exc:
            logger.warning("clip %s failed: %s", entry.clip_id, exc)
            return entry.clip_id, str(exc)

    items = list(enumerate(test_manifest.entries))
    with torch.no_grad():
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(tqdm(pool.map(run, items), total=len(items), desc="eval", disable=not progress))
        else:
            results = [run(item) for item in tqdm(items, desc="eval", disable=not progress)]

    rows, gen_feats, true_feats, failures = [], [], [], []
    for result in results:
        if isinstance(result[0], dict):
            row, gf, tf = result
            rows.append(row)
            gen_feats.append(gf)
            true_feats.append(tf)
        else:
            failures.append(result)
    if len(rows) < 2:
        raise ValidationError(f"only {len(rows)} clips evaluated successfully; need at least 2")

    report = MetricsReport(
        rows=pd.DataFrame(rows, columns=REPORT_COLUMNS),
        frechet=frechet_proxy(np.stack(gen_feats), np.stack(true_feats)),
        failures=failures,
        config_hash=config_hash,
    )
    report.validate()
    agg = report.aggregate
    logger.info(
        "evaluated %d clips (%d failed); dynamic_degree %.4f, cycle_error %.4g, frechet %.4g; not covered: %s",
        len(rows), len(failures), agg["dynamic_degree"], agg["cycle_error"], report.frechet,
        ", ".join(UNCOVERED_DIMENSIONS),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "metrics.csv", report.table())
        write_json(out / "summary.json", report.summary(), indent=None)
    return report


def ground_truth_generator(test_manifest: Manifest, length: int) -> Generator:
    """Generator that returns the stored clip for matching endpoints, reversed for the backward direction."""
    clips = [test_manifest.load_clip(e, length) for e in test_manifest.entries]

    def generate(start, end, caption_ids, direction, seed):
        for clip in clips:
            if np.array_equal(clip[0], start) and np.array_equal(clip[-1], end):
                return clip
            if np.array_equal(clip[-1], start) and np.array_equal(clip[0], end):
                return reverse(clip)
        raise ValidationError("no stored clip matches the requested endpoints")

    return generate
