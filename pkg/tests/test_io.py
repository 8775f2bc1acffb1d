import struct

import numpy as np
import pandas as pd
import pytest

from cycflow.errors import StorageError, ValidationError
from utils.io import (
    append_csv_row,
    dump_ppm_frames,
    load_frame,
    load_records,
    load_tensor,
    read_csv_smart,
    save_ppm,
    save_records,
    save_tensor,
)


def test_tensor_file_layout(tmp_path):
    p = tmp_path / "x.cyc"
    save_tensor(p, np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = p.read_bytes()
    assert raw[:8] == b"CYCFLOW1"
    assert struct.unpack("<III", raw[8:20]) == (2, 2, 3)
    assert np.frombuffer(raw[20:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]
    assert load_tensor(p).shape == (2, 3)


def test_tensor_rejects_foreign_and_truncated_files(tmp_path):
    bad = tmp_path / "bad.cyc"
    bad.write_bytes(b"NOTMAGIC" + b"\0" * 8)
    with pytest.raises(StorageError, match="not a cycflow tensor"):
        load_tensor(bad)

    good = tmp_path / "good.cyc"
    save_tensor(good, np.ones((4, 4)))
    cut = tmp_path / "cut.cyc"
    cut.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(StorageError, match="payload"):
        load_tensor(cut)


def test_missing_file_is_a_storage_error_naming_the_path(tmp_path):
    with pytest.raises(StorageError) as err:
        load_tensor(tmp_path / "nope.cyc")
    assert "nope.cyc" in str(err.value)
    assert err.value.exit_code == 2


def test_checkpoint_records_keep_names_and_order(tmp_path):
    records = {"b.weight": np.ones((2, 3)), "a.bias": np.zeros(3), "tau_fwd": np.full(4, 0.5)}
    p = tmp_path / "m.ckpt"
    save_records(p, records)
    back = load_records(p)
    assert list(back) == list(records)
    assert np.array_equal(back["tau_fwd"], records["tau_fwd"])


@pytest.mark.parametrize(
    "tail, message",
    [
        (b"", "record count"),
        (b"\x01\x00", "record count"),
        (struct.pack("<I", 1) + b"\x01", "record name"),
        (struct.pack("<I", 1) + struct.pack("<H", 6) + b"ab", "inside record name"),
        (struct.pack("<I", 1) + struct.pack("<H", 2) + b"\xff\xfe", "UTF-8"),
    ],
)
def test_damaged_checkpoints_are_storage_errors(tmp_path, tail, message):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"CYCFCKPT" + tail)
    with pytest.raises(StorageError, match=message) as err:
        load_records(p)
    assert err.value.path == p


def test_ppm_is_lossless_for_8bit_content(tmp_path):
    rng = np.random.default_rng(0)
    frame = (rng.integers(0, 256, size=(1, 6, 4)) / 255.0).astype(np.float32)
    p = tmp_path / "f.ppm"
    save_ppm(p, frame)
    assert p.read_bytes()[:2] == b"P6"
    assert np.array_equal(load_frame(p, channels=1), frame)


def test_ppm_rgb_and_shape_checks(tmp_path):
    frame = np.zeros((3, 2, 2), dtype=np.float32)
    frame[0] = 1.0
    save_ppm(tmp_path / "rgb.ppm", frame)
    assert np.array_equal(load_frame(tmp_path / "rgb.ppm", channels=3), frame)
    with pytest.raises(ValidationError):
        save_ppm(tmp_path / "x.ppm", np.zeros((2, 2, 2)))


def test_load_frame_accepts_tensor_files(tmp_path):
    save_tensor(tmp_path / "f.cyc", np.ones((1, 1, 4, 4)))
    assert load_frame(tmp_path / "f.cyc").shape == (1, 4, 4)
    save_tensor(tmp_path / "v.cyc", np.ones((3, 1, 4, 4)))
    with pytest.raises(ValidationError):
        load_frame(tmp_path / "v.cyc")


def test_dump_ppm_frames_names_frames_in_order(tmp_path):
    paths = dump_ppm_frames(tmp_path / "frames", np.zeros((3, 1, 2, 2)))
    assert [p.name for p in paths] == ["frame_000.ppm", "frame_001.ppm", "frame_002.ppm"]


def test_append_csv_row_writes_header_once(tmp_path):
    p = tmp_path / "curve.csv"
    for step in (1, 2):
        append_csv_row(p, {"step": step, "total": 0.5 / step}, ["step", "total"])
    lines = p.read_text().splitlines()
    assert lines == ["step,total", "1,0.5", "2,0.25"]


def test_read_csv_smart_searches_run_subdirectories(tmp_path):
    cell = tmp_path / "none" / "seed_0"
    cell.mkdir(parents=True)
    pd.DataFrame({"step": [1]}).to_csv(cell / "loss_curve.csv", index=False)
    assert read_csv_smart("loss_curve.csv", tmp_path)["step"].tolist() == [1]
    with pytest.raises(FileNotFoundError):
        read_csv_smart("absent.csv", tmp_path)
