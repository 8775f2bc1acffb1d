# utils/io.py
from __future__ import annotations
import json
import struct
from pathlib import Path
from typing import Dict, Iterable

import numpy as np
import pandas as pd
from PIL import Image

from cycflow.errors import StorageError, ValidationError

ENCODINGS = ("utf-8-sig", "utf-8", "latin1")

TENSOR_MAGIC = b"CYCFLOW1"
CHECKPOINT_MAGIC = b"CYCFCKPT"
MAX_RANK = 8


# ============== CSV artifacts ==============
def _try_read_csv(p: Path) -> pd.DataFrame | None:
    if not p or not p.exists() or not p.is_file():
        return None
    for enc in ENCODINGS:
        try:
            df = pd.read_csv(p, encoding=enc)
            if df.shape[1] == 0:
                continue
            return df
        except Exception:
            continue
    return None


def read_csv_smart(filename: str, run_dir: str | Path | None = None) -> pd.DataFrame:
    """
    Find and read a run artifact CSV in this order:
    1) <run_dir>/<filename>
    2) <run_dir>/*/<filename>   (ablation cells, eval subdirectories)
    3) <cwd>/<filename>
    4) glob under run_dir: **/<filename>, shallowest first
    """
    base = Path(run_dir) if run_dir else Path.cwd()
    candidates = [base / filename]
    candidates += sorted(base.glob(f"*/{filename}"))
    candidates.append(Path.cwd() / filename)

    for p in candidates:
        df = _try_read_csv(p)
        if df is not None:
            return df

    hits = sorted(base.rglob(filename), key=lambda x: (len(x.parts), str(x)))
    for p in hits:
        df = _try_read_csv(p)
        if df is not None:
            return df

    raise FileNotFoundError(f"{filename} not found under {base} (cwd={Path.cwd()})")


def append_csv_row(path: Path, row: dict, columns: Iterable[str]) -> None:
    """Append one row; the header is written when the file does not exist yet."""
    path = Path(path)
    frame = pd.DataFrame([row], columns=list(columns))
    try:
        frame.to_csv(path, mode="a", header=not path.exists(), index=False, float_format="%.8g")
    except OSError as exc:
        raise StorageError(f"cannot append CSV row: {exc.strerror}", path) from exc


def write_csv(path: Path, frame: pd.DataFrame) -> None:
    try:
        frame.to_csv(path, index=False, float_format="%.8g")
    except OSError as exc:
        raise StorageError(f"cannot write CSV: {exc.strerror}", path) from exc


def write_json(path: Path, payload, indent: int | None = 2) -> None:
    text = json.dumps(payload, sort_keys=True, indent=indent)
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write JSON: {exc.strerror}", path) from exc


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read JSON: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}") from exc


# ============== tensor files ==============
def _write_array(f, array: np.ndarray) -> None:
    np.array([array.ndim], dtype="<u4").tofile(f)
    np.array(array.shape, dtype="<u4").tofile(f)
    np.ascontiguousarray(array, dtype="<f4").tofile(f)


def _read_array(f, path: Path) -> np.ndarray:
    head = f.read(4)
    if len(head) != 4:
        raise StorageError("file ended before tensor rank", path)
    rank = struct.unpack("<I", head)[0]
    if rank == 0 or rank > MAX_RANK:
        raise StorageError(f"invalid tensor rank {rank}", path)
    dims_raw = f.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise StorageError("file ended inside tensor dims", path)
    shape = tuple(int(d) for d in np.frombuffer(dims_raw, dtype="<u4"))
    count = int(np.prod(shape))
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise StorageError("file ended inside tensor payload", path)
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(path: str | Path, array) -> None:
    """Write `array` as: magic CYCFLOW1, u32 rank, u32 dims, float32 row-major payload (all LE)."""
    path = Path(path)
    array = np.asarray(array, dtype=np.float32)
    try:
        with open(path, "wb") as f:
            f.write(TENSOR_MAGIC)
            _write_array(f, array)
    except OSError as exc:
        raise StorageError(f"cannot write tensor: {exc.strerror}", path) from exc


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            if f.read(len(TENSOR_MAGIC)) != TENSOR_MAGIC:
                raise StorageError("not a cycflow tensor file", path)
            return _read_array(f, path)
    except OSError as exc:
        raise StorageError(f"cannot read tensor: {exc.strerror}", path) from exc


# ============== checkpoints ==============
def save_records(path: str | Path, records: Dict[str, np.ndarray]) -> None:
    """
    Checkpoint layout: magic CYCFCKPT, u32 record count, then per record
    u16 name length, utf-8 name, u32 rank, u32 dims, float32 payload.
    """
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(records)))
            for name, value in records.items():
                raw = name.encode("utf-8")
                f.write(struct.pack("<H", len(raw)))
                f.write(raw)
                _write_array(f, np.asarray(value, dtype=np.float32))
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint: {exc.strerror}", path) from exc


def load_records(path: str | Path) -> Dict[str, np.ndarray]:
    path = Path(path)
    records: Dict[str, np.ndarray] = {}
    try:
        with open(path, "rb") as f:
            if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise StorageError("not a cycflow checkpoint", path)
            raw_count = f.read(4)
            if len(raw_count) != 4:
                raise StorageError("file ended before record count", path)
            (count,) = struct.unpack("<I", raw_count)
            for _ in range(count):
                raw_len = f.read(2)
                if len(raw_len) != 2:
                    raise StorageError("file ended before record name", path)
                (name_len,) = struct.unpack("<H", raw_len)
                raw_name = f.read(name_len)
                if len(raw_name) != name_len:
                    raise StorageError("file ended inside record name", path)
                try:
                    name = raw_name.decode("utf-8")
                except UnicodeDecodeError:
                    raise StorageError("record name is not valid UTF-8", path) from None
                records[name] = _read_array(f, path)
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint: {exc.strerror}", path) from exc
    return records


# ============== frames ==============
def _to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_ppm(path: str | Path, frame) -> None:
    """Write a (C, H, W) frame in [0,1] as binary 8-bit PPM (P6); grayscale is replicated to RGB."""
    path = Path(path)
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[0] not in (1, 3):
        raise ValidationError(f"PPM export needs a (1|3, H, W) frame, got {frame.shape}")
    pixels = np.ascontiguousarray(_to_uint8(frame).transpose(1, 2, 0))
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    try:
        Image.fromarray(pixels).save(path, format="PPM")
    except OSError as exc:
        raise StorageError(f"cannot write PPM: {exc}", path) from exc


def load_ppm(path: str | Path, channels: int = 1) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("L" if channels == 1 else "RGB")
            pixels = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as exc:
        raise StorageError(f"cannot read PPM: {exc}", path) from exc
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return pixels.transpose(2, 0, 1).copy()


def load_frame(path: str | Path, channels: int = 1) -> np.ndarray:
    """Endpoint frame from a .ppm/.pgm file or a repo tensor file ((C,H,W) or (1,C,H,W))."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return load_ppm(path, channels)
    frame = load_tensor(path)
    if frame.ndim == 4 and frame.shape[0] == 1:
        frame = frame[0]
    if frame.ndim != 3:
        raise ValidationError(f"endpoint frame must be (C,H,W), got {frame.shape} in {path}")
    return frame


def dump_ppm_frames(directory: str | Path, video) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(video)):
        p = directory / f"frame_{i:03d}.ppm"
        save_ppm(p, frame)
        paths.append(p)
    return paths
