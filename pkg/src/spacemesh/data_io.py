"""Bit-exact tensor/checkpoint files, PPM/PGM sample I/O and the manifest.

Tensor file (little-endian)::

    b"SMT1" | u32 version | u32 ndim | u64 dims[ndim] | f32 payload

Checkpoint::

    b"SMCK" | u32 count | count * (u16 name_len | utf-8 name | tensor file body)
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Union

import numpy as np

TENSOR_MAGIC = b"SMT1"
CKPT_MAGIC = b"SMCK"
TENSOR_VERSION = 1
MAX_ELEMENTS = 1 << 34
MAX_NDIM = 8

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    """A file does not match its declared format.

    ``expected`` and ``actual`` carry the mismatching quantity when the
    failure is a size or value mismatch.
    """

    def __init__(self, message: str, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class DataError(ValueError):
    """Sample or manifest contents are inconsistent."""


# --------------------------------------------------------------------------
# tensors and checkpoints
# --------------------------------------------------------------------------


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}", n, len(buf))
    return buf


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.size == 0:
        raise FormatError("refusing to write a tensor with zero elements")
    if arr.ndim > MAX_NDIM:
        raise FormatError(f"ndim {arr.ndim} exceeds {MAX_NDIM}")
    head = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}", TENSOR_MAGIC, magic)
    version, ndim = struct.unpack("<II", _read_exact(fh, 8, "tensor header"))
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}", TENSOR_VERSION, version)
    if ndim > MAX_NDIM:
        raise FormatError(f"ndim {ndim} exceeds {MAX_NDIM}", MAX_NDIM, ndim)
    dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "tensor dims"))
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise FormatError(f"dims {dims} overflow the element limit", MAX_ELEMENTS, count)
    if count == 0:
        raise FormatError(f"dims {dims} describe an empty tensor", ">0", 0)
    payload = _read_exact(fh, 4 * count, "tensor payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def _atomic_write(path: PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path: PathLike, arr) -> None:
    _atomic_write(path, encode_tensor(getattr(arr, "data", arr)))


def load_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = decode_tensor(fh)
        if fh.read(1):
            raise FormatError(f"trailing bytes after tensor in {path}")
    return arr


def encode_checkpoint(records: Iterable[tuple]) -> bytes:
    records = list(records)
    names = [n for n, _ in records]
    if len(set(names)) != len(names):
        raise FormatError("checkpoint names must be unique")
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<I", len(records)))
    for name, arr in records:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"name too long: {name[:40]}...")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(encode_tensor(arr))
    return out.getvalue()


def decode_checkpoint(fh: BinaryIO) -> list:
    magic = _read_exact(fh, 4, "checkpoint magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", CKPT_MAGIC, magic)
    (count,) = struct.unpack("<I", _read_exact(fh, 4, "checkpoint count"))
    records, seen = [], set()
    for i in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i} name length"))
        try:
            name = _read_exact(fh, nlen, f"record {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {i} name is not utf-8: {exc}") from None
        if name in seen:
            raise FormatError(f"duplicate record name {name!r}")
        seen.add(name)
        records.append((name, decode_tensor(fh)))
    if fh.read(1):
        raise FormatError("trailing bytes after last checkpoint record")
    return records


def save_checkpoint(path: PathLike, model) -> None:
    """Write every parameter, then every buffer, in enumeration order."""
    _atomic_write(path, encode_checkpoint((n, t.data) for n, t in model.named_state()))


def load_checkpoint(path: PathLike, model=None) -> list:
    """Read records; with ``model`` also copy them into its state by name."""
    with open(path, "rb") as fh:
        records = decode_checkpoint(fh)
    if model is not None:
        state = dict(model.named_state())
        names = [n for n, _ in records]
        if names != list(state):
            missing = sorted(set(state) - set(names))
            extra = sorted(set(names) - set(state))
            raise FormatError(
                f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, arr in records:
            if state[name].data.shape != arr.shape:
                raise FormatError(
                    f"shape mismatch for {name}", state[name].data.shape, arr.shape
                )
            state[name].data = arr.copy()
    return records


# --------------------------------------------------------------------------
# netpbm samples
# --------------------------------------------------------------------------


def _pnm_header(buf: bytes, magic: bytes) -> tuple:
    if buf[:2] != magic:
        raise FormatError(f"expected {magic.decode()} header, got {buf[:2]!r}", magic, buf[:2])
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"malformed {magic.decode()} header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError(f"malformed {magic.decode()} header: no separator before raster")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", 255, maxval)
    if width < 1 or height < 1:
        raise FormatError(f"bad image size {width}x{height}")
    return width, height, pos + 1


def _read_pnm(path: PathLike, magic: bytes, channels: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, off = _pnm_header(buf, magic)
    need = w * h * channels
    raster = buf[off : off + need]
    if len(raster) != need:
        raise FormatError(f"truncated raster in {path}: expected {need} bytes, got {len(raster)}", need, len(raster))
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"PPM needs uint8 (H, W, 3), got {rgb.dtype} {rgb.shape}")
    h, w, _ = rgb.shape
    _atomic_write(path, f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb).tobytes())


def write_pgm(path: PathLike, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise DataError(f"PGM needs uint8 (H, W), got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(gray).tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    return _read_pnm(path, b"P6", 3)


def read_pgm(path: PathLike) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


@dataclass
class SegSample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    label: np.ndarray  # (H, W) uint8, 255 = ignore

    @property
    def hw(self) -> tuple:
        return self.label.shape


def read_sample(image_path: PathLike, label_path: PathLike) -> SegSample:
    rgb = read_ppm(image_path)
    label = read_pgm(label_path)
    if rgb.shape[:2] != label.shape:
        raise DataError(f"image {rgb.shape[:2]} and label {label.shape} dims differ")
    image = rgb.transpose(2, 0, 1).astype(np.float32) / 255.0
    return SegSample(image, label.copy())


def write_sample(image_path: PathLike, label_path: PathLike, sample: SegSample) -> None:
    if sample.image.shape[1:] != sample.label.shape:
        raise DataError(f"image {sample.image.shape[1:]} and label {sample.label.shape} dims differ")
    rgb = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    write_ppm(image_path, rgb)
    write_pgm(label_path, sample.label.astype(np.uint8))


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


@dataclass
class Manifest:
    """Image/label pairs with split tags, plus per-channel normalization stats."""

    root: Path
    entries: list  # (image_path, label_path, split)
    mean: tuple = (0.0, 0.0, 0.0)
    std: tuple = (1.0, 1.0, 1.0)

    def split(self, name: str) -> list:
        return [(self.root / i, self.root / l) for i, l, s in self.entries if s == name]

    def normalize(self, image: np.ndarray) -> np.ndarray:
        m = np.asarray(self.mean, np.float32)[:, None, None]
        s = np.asarray(self.std, np.float32)[:, None, None]
        return (image - m) / s

    def load_split(self, name: str) -> tuple:
        """Normalized images (N, 3, H, W) and labels (N, H, W) for one split."""
        samples = [read_sample(i, l) for i, l in self.split(name)]
        if not samples:
            raise DataError(f"split {name!r} is empty")
        images = np.stack([self.normalize(s.image) for s in samples]).astype(np.float32)
        labels = np.stack([s.label for s in samples]).astype(np.int64)
        return images, labels


def write_manifest(path: PathLike, entries, mean, std) -> None:
    lines = ["# mean\t" + "\t".join(repr(float(v)) for v in mean), "# std\t" + "\t".join(repr(float(v)) for v in std)]
    lines += [f"{i}\t{l}\t{s}" for i, l, s in entries]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path: PathLike) -> Manifest:
    path = Path(path)
    entries, mean, std = [], (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].strip().split("\t")
            if parts[0] in ("mean", "std"):
                vals = tuple(float(v) for v in parts[1:])
                if parts[0] == "mean":
                    mean = vals
                else:
                    std = vals
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected image<TAB>label<TAB>split")
        entries.append(tuple(parts))
    return Manifest(path.parent, entries, mean, std)
