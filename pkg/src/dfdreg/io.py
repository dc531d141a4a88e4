"""Binary raster formats (PGM, FFLT, FSIN, FWVT) and JSON helpers.

Layouts, all little-endian except PGM payloads::

    FFLT  b"FFLT" u32 width  u32 height  4 reserved bytes  f64[height*width]
    FSIN  b"FSIN" u32 n_angles u32 n_offsets u8 angle_flag 7 pad  f64[...]
    FWVT  b"FWVT" u32 size u32 levels  f64 approx, then detail blocks
          fine-to-coarse, orientation order horizontal, vertical, diagonal
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import AngleRange, Image, Sinogram
from .exceptions import FormatError, InvalidArgumentError

_FFLT = struct.Struct("<4sII4x")
_FSIN = struct.Struct("<4sIIB7x")
_FWVT = struct.Struct("<4sII")


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def _payload(data: bytes, offset: int, count: int) -> np.ndarray:
    need = offset + 8 * count
    if len(data) < need:
        raise FormatError(
            f"truncated payload: expected {need} bytes, got {len(data)}", len(data)
        )
    if len(data) > need:
        raise FormatError("trailing bytes after payload", need)
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)


def _header(data: bytes, fmt: struct.Struct, magic: bytes):
    if len(data) < 4:
        raise FormatError("file too short for magic number", 0)
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}", 0)
    if len(data) < fmt.size:
        raise FormatError("truncated header", len(data))
    return fmt.unpack_from(data, 0)


# ---------------------------------------------------------------------------
# images


def write_image(image: Image, path) -> None:
    """Write ``image`` as raw float (default) or PGM when the suffix is .pgm."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(image, path)
        return
    px = np.asarray(image.pixels, dtype="<f8")
    path.write_bytes(_FFLT.pack(b"FFLT", image.width, image.height) + px.tobytes())


def read_image(path) -> Image:
    data = _read_bytes(path)
    if data[:2] == b"P5":
        return _parse_pgm(data)
    _, w, h = _header(data, _FFLT, b"FFLT")
    px = _payload(data, _FFLT.size, w * h).reshape(h, w)
    try:
        return Image(px)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc), 4) from exc


def _parse_pgm(data: bytes) -> Image:
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(data) and (data[pos : pos + 1].isspace() or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header", pos)
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("malformed PGM header", pos)
    pos += 1
    w, h, maxval = fields
    if not 0 < maxval < 65536:
        raise FormatError(f"unsupported PGM maxval {maxval}", pos)
    dtype = ">u1" if maxval < 256 else ">u2"
    nbytes = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < nbytes:
        raise FormatError("truncated PGM payload", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    px = raw.reshape(h, w).astype(np.float64) / maxval
    try:
        return Image(px)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc), 2) from exc


def write_pgm(image: Image, path, maxval: int = 65535) -> None:
    """Binary PGM; values are clipped to [0, 1] and scaled to ``maxval``."""
    px = np.rint(np.clip(image.pixels, 0.0, 1.0) * maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    head = f"P5\n{image.width} {image.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(head + px.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# sinograms


def write_sinogram(sino: Sinogram, path) -> None:
    v = np.asarray(sino.values, dtype="<f8")
    head = _FSIN.pack(b"FSIN", sino.n_angles, sino.n_offsets, sino.angle_range.flag)
    Path(path).write_bytes(head + v.tobytes())


def read_sinogram(path, offset_spacing: float = 1.0) -> Sinogram:
    """Read an FSIN file. The format does not store the offset spacing."""
    data = _read_bytes(path)
    _, na, no, flag = _header(data, _FSIN, b"FSIN")
    if flag not in (0, 1):
        raise FormatError(f"bad angle_range flag {flag}", 12)
    v = _payload(data, _FSIN.size, na * no).reshape(na, no)
    try:
        return Sinogram(v, AngleRange.from_flag(flag), offset_spacing)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc), _FSIN.size) from exc


# ---------------------------------------------------------------------------
# wavelet fields


def write_wavelet_field(field, path) -> None:
    head = _FWVT.pack(b"FWVT", field.size, field.levels)
    Path(path).write_bytes(head + np.asarray(field.to_vector(), dtype="<f8").tobytes())


def read_wavelet_field(path):
    from .dfd import WaveletField

    data = _read_bytes(path)
    _, size, levels = _header(data, _FWVT, b"FWVT")
    if size == 0 or size & (size - 1) or levels < 1 or size >> levels == 0:
        raise FormatError(f"inconsistent size/levels {size}/{levels}", 4)
    vec = _payload(data, _FWVT.size, size * size)
    return WaveletField.from_vector(vec, size, levels)


# ---------------------------------------------------------------------------
# json


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(obj, path) -> None:
    text = json.dumps(_to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    data = _read_bytes(path)
    if not data.strip():
        raise FormatError("empty JSON document", 0)
    try:
        return json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError("JSON is not valid UTF-8", exc.start) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", exc.pos) from exc
