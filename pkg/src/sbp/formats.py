"""Binary raster formats: 8-bit PGM (P5) and FMAP float maps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FMAP_MAGIC = b"FMAP"


def write_pgm(path, img: np.ndarray) -> None:
    """Write a gray image in [0, 1] (or a bool mask as {0, 255})."""
    img = np.asarray(img)
    if img.dtype == bool:
        data = np.where(img, 255, 0).astype(np.uint8)
    elif img.dtype == np.uint8:
        data = img
    else:
        data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(data).tobytes())


def _pgm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while buf[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1


def read_pgm_raw(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), pos = _pgm_tokens(buf, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated PGM payload")
    return data.reshape(h, w).copy()


def read_pgm(path) -> np.ndarray:
    return read_pgm_raw(path).astype(np.float64) / 255.0


def read_pgm_mask(path) -> np.ndarray:
    return read_pgm_raw(path) >= 128


def write_fmap(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC + struct.pack("<III", w, h, 0))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_fmap(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != FMAP_MAGIC:
        raise ValueError(f"{path}: bad FMAP magic")
    w, h, _ = struct.unpack("<III", buf[4:16])
    data = np.frombuffer(buf, dtype="<f4", offset=16)
    if data.size != w * h:
        raise ValueError(f"{path}: FMAP payload has {data.size} values, expected {w * h}")
    return data.reshape(h, w).astype(np.float32)
