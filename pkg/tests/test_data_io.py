import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spacemesh.checks import tiny_model_config
from spacemesh.data_io import (
    DataError, FormatError, SegSample, decode_checkpoint, decode_tensor, encode_checkpoint, encode_tensor,
    load_checkpoint, load_tensor, read_manifest, read_pgm, read_ppm, read_sample, save_checkpoint,
    save_tensor, write_manifest, write_pgm, write_ppm, write_sample,
)
from spacemesh.model import SpaceMeshLab


@settings(max_examples=50)
@given(arrays(np.float32, st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple)))
def test_tensor_round_trip_is_bit_exact(arr):
    back = decode_tensor(io.BytesIO(encode_tensor(arr)))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_file_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_tensor(tmp_path / "t.smt", arr)
    raw = (tmp_path / "t.smt").read_bytes()
    assert raw[:4] == b"SMT1"
    assert struct.unpack("<IIQQ", raw[4:28]) == (1, 2, 2, 3)
    assert raw[28:] == arr.astype("<f4").tobytes()
    assert np.array_equal(load_tensor(tmp_path / "t.smt"), arr)


def test_truncation_names_byte_counts():
    raw = encode_tensor(np.ones((2, 3, 4, 5), np.float32))
    with pytest.raises(FormatError) as info:
        decode_tensor(io.BytesIO(raw[:-7]))
    assert info.value.expected == 480 and info.value.actual == 473
    assert "480" in str(info.value) and "473" in str(info.value)


def test_header_errors():
    good = encode_tensor(np.ones(3, np.float32))
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(io.BytesIO(b"XXXX" + good[4:]))
    with pytest.raises(FormatError, match="version"):
        decode_tensor(io.BytesIO(good[:4] + struct.pack("<I", 2) + good[8:]))
    zero = b"SMT1" + struct.pack("<IIQ", 1, 1, 0)
    with pytest.raises(FormatError, match="empty"):
        decode_tensor(io.BytesIO(zero))
    huge = b"SMT1" + struct.pack("<IIQQ", 1, 2, 2**40, 2**40)
    with pytest.raises(FormatError, match="overflow"):
        decode_tensor(io.BytesIO(huge))
    with pytest.raises(FormatError):
        encode_tensor(np.zeros((0, 3), np.float32))


def test_checkpoint_round_trip_and_canonical_bytes(tmp_path):
    model = SpaceMeshLab(tiny_model_config(5))
    save_checkpoint(tmp_path / "a.smck", model)
    other = SpaceMeshLab(tiny_model_config(6))
    load_checkpoint(tmp_path / "a.smck", other)
    for (n1, a), (n2, b) in zip(model.named_state(), other.named_state()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()
    save_checkpoint(tmp_path / "b.smck", other)
    assert (tmp_path / "a.smck").read_bytes() == (tmp_path / "b.smck").read_bytes()


def test_checkpoint_mismatch_and_duplicates(tmp_path):
    save_checkpoint(tmp_path / "a.smck", SpaceMeshLab(tiny_model_config()))
    cfg = tiny_model_config()
    cfg.head = "aspp"
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "a.smck", SpaceMeshLab(cfg))
    with pytest.raises(FormatError, match="unique"):
        encode_checkpoint([("a", np.ones(1)), ("a", np.ones(1))])


def test_checkpoint_truncation_fuzz():
    raw = encode_checkpoint([("w", np.ones((3, 4), np.float32)), ("b", np.arange(5, dtype=np.float32))])
    rng = np.random.default_rng(0)
    for cut in rng.choice(len(raw), 100, replace=True):
        with pytest.raises(FormatError):
            decode_checkpoint(io.BytesIO(raw[:cut]))


def test_pnm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rgb = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    write_pgm(tmp_path / "a.pgm", gray)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), gray)


def test_pnm_header_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# hi\n2 1\n255\n\x01\x02")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 2]]


def test_pnm_errors(tmp_path):
    (tmp_path / "m.ppm").write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
    with pytest.raises(FormatError, match="maxval"):
        read_ppm(tmp_path / "m.ppm")
    (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 5)
    with pytest.raises(FormatError, match="truncated"):
        read_ppm(tmp_path / "t.ppm")
    (tmp_path / "w.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "w.ppm")


def test_sample_round_trip_and_dim_mismatch(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, (3, 8, 8)).astype(np.float32) / 255.0
    label = rng.integers(0, 4, (8, 8)).astype(np.uint8)
    write_sample(tmp_path / "i.ppm", tmp_path / "l.pgm", SegSample(image, label))
    back = read_sample(tmp_path / "i.ppm", tmp_path / "l.pgm")
    assert np.array_equal(back.image, image) and np.array_equal(back.label, label)
    write_ppm(tmp_path / "big.ppm", np.zeros((64, 64, 3), np.uint8))
    write_pgm(tmp_path / "small.pgm", np.zeros((32, 32), np.uint8))
    with pytest.raises(DataError, match="differ"):
        read_sample(tmp_path / "big.ppm", tmp_path / "small.pgm")


def test_manifest_round_trip(tmp_path):
    entries = [("a.ppm", "a.pgm", "train"), ("b.ppm", "b.pgm", "val")]
    write_manifest(tmp_path / "m.txt", entries, (0.1, 0.2, 0.3), (1.0, 2.0, 3.0))
    m = read_manifest(tmp_path / "m.txt")
    assert m.entries == entries and m.mean == (0.1, 0.2, 0.3) and m.std == (1.0, 2.0, 3.0)
    (tmp_path / "bad.txt").write_text("only-one-field\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "bad.txt")
