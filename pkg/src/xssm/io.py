"""PFM / PPM images, binary checkpoints and ``key = value`` config files.

Every writer goes through :func:`atomic_write`, so a crash never leaves a
half-written file under the final name.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import fields
from pathlib import Path
from typing import Mapping

import numpy as np

CKPT_MAGIC = b"XSSM"
CKPT_VERSION = 1


class FormatError(ValueError):
    """Malformed, truncated or corrupted file."""


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PFM -----------------------------------------------------------------------

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header")
    return buf[start:pos], pos


def _parse_header(buf: bytes, ntok: int) -> tuple[list[bytes], int]:
    toks, pos = [], 0
    for _ in range(ntok):
        tok, pos = _read_token(buf, pos)
        toks.append(tok)
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("header must end with a single whitespace byte")
    return toks, pos + 1


def _dims(w: bytes, h: bytes) -> tuple[int, int]:
    try:
        W, H = int(w), int(h)
    except ValueError as exc:
        raise FormatError(f"bad dimensions {w!r} {h!r}") from exc
    if W <= 0 or H <= 0:
        raise FormatError(f"image dimensions must be positive, got {W}x{H}")
    return W, H


def decode_pfm(buf: bytes) -> np.ndarray:
    """Grayscale ``Pf`` bytes -> float32 array [1, H, W] in top-down row order."""
    toks, pos = _parse_header(buf, 4)
    if toks[0] != b"Pf":
        raise FormatError(f"not a grayscale PFM (magic {toks[0]!r})")
    W, H = _dims(toks[1], toks[2])
    try:
        scale = float(toks[3])
    except ValueError as exc:
        raise FormatError(f"bad scale {toks[3]!r}") from exc
    if scale == 0:
        raise FormatError("scale must be non-zero")
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    need = W * H * 4
    if len(buf) - pos < need:
        raise FormatError(f"truncated PFM: need {need} data bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dt, count=W * H, offset=pos).reshape(H, W)
    return arr[::-1].astype(np.float32)[None]


def encode_pfm(depth: np.ndarray) -> bytes:
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim == 3:
        if d.shape[0] != 1:
            raise ValueError(f"PFM holds one channel, got shape {d.shape}")
        d = d[0]
    if d.ndim != 2 or 0 in d.shape:
        raise ValueError(f"PFM needs a non-empty [H, W] map, got shape {d.shape}")
    H, W = d.shape
    header = f"Pf\n{W} {H}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(d[::-1], dtype="<f4").tobytes()


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def write_pfm(path, depth: np.ndarray) -> None:
    atomic_write(path, encode_pfm(depth))


# -- PPM -----------------------------------------------------------------------

def decode_ppm(buf: bytes) -> np.ndarray:
    """Binary P6 (maxval 255) -> float32 [3, H, W] in [0, 1]."""
    toks, pos = _parse_header(buf, 4)
    if toks[0] != b"P6":
        raise FormatError(f"not a binary PPM (magic {toks[0]!r})")
    W, H = _dims(toks[1], toks[2])
    if toks[3] != b"255":
        raise FormatError(f"only maxval 255 is supported, got {toks[3]!r}")
    need = 3 * W * H
    if len(buf) - pos < need:
        raise FormatError(f"truncated PPM: need {need} data bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(H, W, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def encode_ppm(rgb: np.ndarray) -> bytes:
    x = np.asarray(rgb, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3 or 0 in x.shape:
        raise ValueError(f"PPM needs a non-empty [3, H, W] image, got shape {x.shape}")
    q = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    _, H, W = q.shape
    return f"P6\n{W} {H}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    atomic_write(path, encode_ppm(rgb))


# -- checkpoints -----------------------------------------------------------------

def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Layout: magic, u32 version, u32 count, then per tensor
    (u32 name length, UTF-8 name, u32 rank, u64 dims, f32 data), all
    little-endian, followed by the CRC32 of everything before it."""
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 16 or buf[:4] != CKPT_MAGIC:
        raise FormatError("not an XSSM checkpoint")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch (truncated or corrupted)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            n = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * n > len(body):
                raise FormatError(f"tensor {name!r} runs past the end of the file")
            out[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes after the last tensor")
    return out


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write(path, encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


# -- config files ------------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, typ: type):
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ is type(None):
        return None if raw.lower() in ("none", "") else int(raw)
    try:
        return typ(raw)
    except ValueError as exc:
        raise ValueError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config(text: str, schema: Mapping[str, type]) -> dict:
    """Parse ``key = value`` lines against ``schema`` (key -> type).

    ``#`` starts a comment; blank lines are ignored; unknown or repeated
    keys raise ``ValueError``. Keys absent from the text are simply absent
    from the result, so callers fall back to their own defaults.
    """
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, raw, schema[key])
    return out


def dataclass_schema(*classes) -> dict[str, type]:
    schema: dict[str, type] = {}
    for cls in classes:
        for f in fields(cls):
            schema[f.name] = type(getattr(cls(), f.name))
    return schema


def format_config(values: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
