"""cycflow command line: gen-data, train, sample, eval, ablate, inspect.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from cycflow.codec import Codec
from cycflow.config import RunConfig, load_run_config, write_resolved
from cycflow.data import CAPTION_VOCAB, generate_dataset, load_manifest, parse_caption
from cycflow.errors import ConfigError, CycflowError, StorageError, ValidationError
from cycflow.evaluate import (
    direction_probe,
    evaluate_suite,
    ground_truth_generator,
    model_generator,
)
from cycflow.inference import interpolate
from cycflow.lora import adapter_census, adapter_rank
from cycflow.model import ModelConfig, VelocityNet, load_model, parameter_census, sidecar_path
from cycflow.train import run_curriculum, validation_loss
from utils.io import dump_ppm_frames, load_frame, load_records, read_json, save_tensor, write_csv
from utils.logs import progress_enabled, setup_logging

logger = logging.getLogger("cycflow.cli")

DEFAULT_CONFIG = "config.toml"
DEFAULT_VARIANTS = ("none", "no_reverse", "no_direction_tokens", "mixed_length")
THREADS_ENV = "CYCFLOW_NUM_THREADS"


# ---------------------------------------------------------------- helpers
def _run_config(args, flags: dict) -> RunConfig:
    """defaults < config file < --set overrides < dedicated flags (`flags` maps dest -> (section, key))."""
    path = args.config
    if path is None and Path(DEFAULT_CONFIG).exists():
        path = DEFAULT_CONFIG
    run = load_run_config(path, args.set or ())
    for dest, (section, key) in flags.items():
        value = getattr(args, dest, None)
        if value is not None:
            run = run.with_section(section, **{key: value})
    return run


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory: {exc.strerror}", out) from exc
    return out


def _codec_for(checkpoint: Path) -> Codec:
    side = sidecar_path(checkpoint)
    if side.exists():
        data = read_json(side).get("data", {})
        return Codec(spatial=2, temporal=int(data.get("temporal_compression", 1)))
    return Codec()


def _check_compatible(model_config: ModelConfig, manifest) -> None:
    if manifest.frame_size // 2 != model_config.latent_size:
        raise ValidationError(
            f"dataset frames are {manifest.frame_size}px but the model expects {model_config.latent_size * 2}px"
        )
    if manifest.channels != model_config.latent_channels:
        raise ValidationError(f"dataset has {manifest.channels} channels, model expects {model_config.latent_channels}")
    if model_config.vocab_size < len(CAPTION_VOCAB):
        raise ValidationError(f"model vocabulary {model_config.vocab_size} is smaller than {len(CAPTION_VOCAB)}")


def _fresh_model(config: ModelConfig, seed: int) -> VelocityNet:
    torch.manual_seed(seed)
    return VelocityNet(config)


def _apply_thread_cap() -> None:
    threads = os.environ.get(THREADS_ENV)
    if not threads:
        return
    try:
        count = int(threads)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
    torch.set_num_threads(max(1, count))


# ---------------------------------------------------------------- commands
def cmd_gen_data(args) -> int:
    run = _run_config(args, {
        "count": ("data", "count"), "seed": ("data", "seed"), "frame_size": ("data", "frame_size"),
        "workers": ("data", "workers"),
    })
    data = run.data
    if args.short is not None or args.long is not None:
        short = args.short if args.short is not None else data.lengths[0]
        long = args.long if args.long is not None else data.lengths[1]
        run = run.with_section("data", lengths=(short, long))
        data = run.data
    classes = tuple(c.strip() for c in args.classes.split(",")) if args.classes else data.classes
    out = _out_dir(args.out)
    manifest = generate_dataset(
        data.count, data.lengths, data.seed, out,
        frame_size=data.frame_size, channels=data.channels, classes=classes,
        manifest_name=args.manifest_name, workers=data.workers,
    )
    write_resolved(run, out, {"command": "gen-data", "classes": list(classes), "manifest": args.manifest_name})
    print(f"{manifest.path}: {len(manifest)} clip pairs {manifest.class_histogram()}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args, {
        "lr_adapters": ("train", "lr_adapters"), "lr_tokens": ("train", "lr_tokens"), "mode": ("train", "mode"),
        "ablation": ("train", "ablation"), "seed": ("train", "seed"), "batch": ("train", "batch"),
        "phase1_steps": ("train", "phase1_steps"), "phase2_steps": ("train", "phase2_steps"),
    })
    cfg = run.train
    manifest = load_manifest(args.data)
    if cfg.mode == "adapters_only" and not args.resume:
        raise ValidationError("--mode adapters_only needs --resume with a base checkpoint")

    if args.resume:
        model = load_model(args.resume)
        run = RunConfig(run.data, model.config, run.train, run.eval, run.sample, run.source)
    else:
        model = _fresh_model(run.model, cfg.seed)
    _check_compatible(model.config, manifest)
    if tuple(manifest.lengths) != tuple(cfg.lengths):
        run = run.with_section("train", lengths=tuple(manifest.lengths))
        cfg = run.train

    out = _out_dir(args.out)
    write_resolved(run, out, {"command": "train", "data": str(args.data), "resume": args.resume})
    began = time.perf_counter()
    result = run_curriculum(
        cfg, manifest, model, out, codec=run.data.codec(),
        extra={"data": run.data.to_dict()},
        progress=progress_enabled(),
    )
    logger.info("train wall-clock %.1fs", time.perf_counter() - began)
    print(f"{result.final_checkpoint} ({len(result.history)} loss rows in {result.loss_curve})")
    return 0


def cmd_sample(args) -> int:
    run = _run_config(args, {
        "frames": ("sample", "frames"), "steps": ("sample", "steps"), "seed": ("sample", "seed"),
        "direction": ("sample", "direction"), "caption": ("sample", "caption"), "clamp": ("sample", "clamp_endpoints"),
    })
    cfg = run.sample
    checkpoint = Path(args.checkpoint)
    model = load_model(checkpoint)
    codec = _codec_for(checkpoint)
    channels = model.config.latent_channels
    start, end = load_frame(args.start, channels), load_frame(args.end, channels)
    ids = parse_caption(cfg.caption)

    began = time.perf_counter()
    video = interpolate(model, codec, start, end, ids, cfg.direction, cfg.frames, cfg.steps, cfg.seed, cfg.clamp_endpoints)
    logger.info("sample wall-clock %.3fs (%d frames, %d steps, forward pass only)", time.perf_counter() - began, cfg.frames, cfg.steps)

    out = _out_dir(args.out)
    array = video.detach().cpu().numpy()
    save_tensor(out / "video.cyc", array)
    dump_ppm_frames(out / "frames", array)
    write_resolved(run, out, {"command": "sample", "checkpoint": str(checkpoint), "start": str(args.start), "end": str(args.end)})
    print(f"{out / 'video.cyc'}: {array.shape[0]} frames")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args, {"steps": ("eval", "steps"), "seed": ("eval", "seed"), "clamp": ("eval", "clamp_endpoints"), "workers": ("eval", "workers")})
    test = load_manifest(args.test)
    out = _out_dir(args.out)
    if args.reference:
        length = run.eval.length or test.lengths[1]
        generator = ground_truth_generator(load_manifest(args.reference), length)
        model, codec = None, Codec()
    elif args.checkpoint:
        model = load_model(args.checkpoint)
        codec = _codec_for(Path(args.checkpoint))
        _check_compatible(model.config, test)
        generator = None
    else:
        raise ValidationError("eval needs --checkpoint or --reference")
    write_resolved(run, out, {"command": "eval", "checkpoint": args.checkpoint, "test": str(args.test), "reference": args.reference})
    report = evaluate_suite(model, test, run.eval, out, codec=codec, generator=generator,
                            config_hash=run.config_hash(), progress=progress_enabled())
    print(report.table().to_string(index=False))
    print(f"frechet {report.frechet:.6g}")
    return 0


def _ablation_cell(variant: str, seed: int, run: RunConfig, model: VelocityNet, manifest, test, out: Path) -> dict:
    cell_out = out / variant / f"seed_{seed}"
    cfg = run.with_section("train", ablation=variant, seed=seed).train
    codec = run.data.codec()
    result = run_curriculum(cfg, manifest, model, cell_out, codec=codec, extra={"data": run.data.to_dict()}, progress=False)
    trained = result.model
    eval_cfg = run.with_section("eval", seed=seed).eval
    report = evaluate_suite(trained, test, eval_cfg, cell_out / "eval", codec=codec, progress=False)

    long_len = test.lengths[1]
    videos, captions = test.clips(long_len)
    generate = model_generator(trained, codec, long_len, eval_cfg.steps)
    margins = [
        direction_probe(generate, v[0], v[-1], c.tolist(), seed).margin for v, c in zip(videos, captions)
    ]
    return {
        "variant": variant,
        "seed": seed,
        **report.aggregate,
        "frechet": report.frechet,
        "val_loss_long": validation_loss(trained, videos, captions, seed=seed, codec=codec),
        "probe_win_rate": float(np.mean([m > 0 for m in margins])),
        "probe_margin_mean": float(np.mean(margins)),
        "final_loss": float(result.history["total"].iloc[-1]) if not result.history.empty else float("nan"),
    }


def cmd_ablate(args) -> int:
    run = _run_config(args, {"phase1_steps": ("train", "phase1_steps"), "phase2_steps": ("train", "phase2_steps")})
    variants = tuple(v.strip() for v in args.variants.split(",")) if args.variants else DEFAULT_VARIANTS
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(run.eval.seeds)
    out = _out_dir(args.out)
    manifest = load_manifest(args.data)
    if args.test:
        test = load_manifest(args.test)
    else:
        data = run.data
        test = generate_dataset(
            data.test_count, manifest.lengths, data.seed + 10_007, out / "test_data",
            frame_size=manifest.frame_size, channels=manifest.channels, classes=data.test_classes,
        )
    run = run.with_section("train", lengths=tuple(manifest.lengths))
    _check_compatible(run.model, manifest)
    write_resolved(run, out, {"command": "ablate", "variants": list(variants), "seeds": seeds})

    # models are built up front so global-RNG initialization never races between threads
    cells = [(v, s, _fresh_model(run.model, s)) for v in variants for s in seeds]
    logger.info("ablation matrix: %d variants x %d seeds = %d runs", len(variants), len(seeds), len(cells))
    work = lambda cell: _ablation_cell(cell[0], cell[1], run, cell[2], manifest, test, out)  # noqa: E731
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(c) for c in cells]

    runs = pd.DataFrame(rows)
    write_csv(out / "ablation_runs.csv", runs)
    table = comparison_table(runs)
    write_csv(out / "ablation.csv", table)
    print(table.to_string(index=False))
    return 0


def comparison_table(runs: pd.DataFrame) -> pd.DataFrame:
    """Variant rows, metric columns averaged over seeds, plus a per-seed reverse-training trend flag."""
    metrics = [c for c in runs.columns if c not in ("variant", "seed")]
    order = list(dict.fromkeys(runs["variant"]))
    table = runs.groupby("variant", sort=False)[metrics].mean().reindex(order).reset_index()
    full = runs[runs["variant"] == "none"].set_index("seed")["dynamic_degree"]
    ablated = runs[runs["variant"] == "no_reverse"].set_index("seed")["dynamic_degree"]
    shared = full.index.intersection(ablated.index)
    trend_ok = bool(len(shared)) and bool((full[shared] > ablated[shared]).all())
    table["trend_ok"] = trend_ok
    return table


def cmd_inspect(args) -> int:
    if args.dashboard:
        app = Path(__file__).resolve().parent.parent / "app.py"
        env = dict(os.environ, CYCFLOW_RUN_DIR=str(Path(args.run_dir or ".").resolve()))
        return subprocess.call([sys.executable, "-m", "streamlit", "run", str(app)], env=env)
    if not args.checkpoint:
        raise ValidationError("inspect needs a checkpoint or --dashboard")
    checkpoint = Path(args.checkpoint)
    records = load_records(checkpoint)
    model = load_model(checkpoint)
    base = parameter_census(model.config)
    lora = adapter_census(model)
    print(f"checkpoint       {checkpoint}")
    print(f"records          {len(records)}")
    print(f"base parameters  {base}")
    print(f"adapter params   {lora}")
    print(f"adapter rank     {adapter_rank(model) if lora else '-'}")
    print(f"trainable now    {sum(p.numel() for p in model.parameters() if p.requires_grad)}")
    for key, value in sorted(model.config.to_dict().items()):
        print(f"  model.{key:<24} {value}")
    return 0


# ---------------------------------------------------------------- parser
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help=f"TOML run config (default ./{DEFAULT_CONFIG} when present)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value; repeatable")
    p.add_argument("--log-level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycflow", description="Bidirectional rectified-flow frame interpolation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a procedural clip dataset")
    _common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--short", type=int)
    p.add_argument("--long", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--frame-size", dest="frame_size", type=int)
    p.add_argument("--classes", help="comma-separated trajectory classes (default all)")
    p.add_argument("--manifest-name", default="manifest.json")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="bidirectional curriculum training")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--lr-adapters", dest="lr_adapters", type=float)
    p.add_argument("--lr-tokens", dest="lr_tokens", type=float)
    p.add_argument("--mode", choices=("full", "adapters_only"))
    p.add_argument("--ablation", choices=("none", "no_reverse", "no_direction_tokens", "mixed_length", "long_only"))
    p.add_argument("--batch", type=int)
    p.add_argument("--phase1-steps", dest="phase1_steps", type=int)
    p.add_argument("--phase2-steps", dest="phase2_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="interpolate between two endpoint frames")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start", required=True, help="start frame (.ppm/.pgm or tensor file)")
    p.add_argument("--end", required=True, help="end frame (.ppm/.pgm or tensor file)")
    p.add_argument("--caption", help="comma-separated caption words, e.g. accelerate,disc")
    p.add_argument("--direction", choices=("forward", "backward", "fwd", "bwd"))
    p.add_argument("--frames", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--clamp", action="store_true", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a checkpoint on a test manifest")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--reference", help="manifest whose clips stand in for generated ones")
    p.add_argument("--test", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--clamp", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation matrix")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--seeds", help="comma-separated seeds (default eval.seeds)")
    p.add_argument("--variants", help=f"comma-separated ablations (default {','.join(DEFAULT_VARIANTS)})")
    p.add_argument("--phase1-steps", dest="phase1_steps", type=int)
    p.add_argument("--phase2-steps", dest="phase2_steps", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="checkpoint census or the results dashboard")
    _common(p)
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("--dashboard", action="store_true")
    p.add_argument("--run-dir", dest="run_dir")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    try:
        _apply_thread_cap()
        return args.func(args)
    except CycflowError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return StorageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
