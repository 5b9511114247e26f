"""Core image and depth-map value types, convolution, and bit-exact PGM I/O.

Intensities are kept as normalized floats (nominal range [0, 1]); files use
binary PGM ("P5"), written at 16 bit to preserve low-light dynamic range.
Depth maps ride on the same container with a text sidecar giving the
meters-per-unit scale.

All value types freeze their backing arrays after construction, so every
operation here is a pure function and safe to share across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve as _sig_convolve

# Depth scale for 16-bit depth files: 1/4096 m per unit.  Dyadic, so every
# multiple of 0.25 m round-trips exactly through the file format.
DEPTH_SCALE_M_PER_UNIT = 1.0 / 4096.0
# Largest representable depth at that scale; used as the "no hit" sentinel.
FAR_CAP_M = 65535.0 / 4096.0


class PgmParseError(ValueError):
    """Malformed PGM file; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """Single-channel intensity grid, row-major, float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GrayImage values must be finite")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "GrayImage":
        return cls(np.zeros((height, width)))

    @classmethod
    def full(cls, width: int, height: int, value: float) -> "GrayImage":
        return cls(np.full((height, width), float(value)))

    def clamped(self) -> "GrayImage":
        return GrayImage(np.clip(self.data, 0.0, 1.0))


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth in meters; positive and finite everywhere."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"DepthMap needs a 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise ValueError("DepthMap values must be finite and > 0")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryMask:
    """Strictly binary per-pixel mask, stored as bool."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask needs a 2-D array, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            values = np.unique(arr)
            if not np.all(np.isin(values, (0, 1))):
                raise ValueError("BinaryMask values must be 0 or 1")
            arr = arr.astype(bool)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


# ---------------------------------------------------------------------------
# convolution


def convolve2d(image: GrayImage, kernel: GrayImage) -> GrayImage:
    """2-D convolution with replicate-edge padding.

    Border policy is replicate-edge so that constant images stay constant
    all the way to the border under any normalized kernel.
    """
    img = image.data
    ker = kernel.data
    if img.size == 0 or ker.size == 0:
        raise ValueError("convolve2d: zero-sized input")
    kh, kw = ker.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"convolve2d: kernel sides must be odd, got {ker.shape}")
    if np.any(ker < 0.0):
        raise ValueError("convolve2d: kernel values must be >= 0")
    if kh == 1 and kw == 1:
        return GrayImage(img * ker[0, 0])
    py, px = kh // 2, kw // 2
    padded = np.pad(img, ((py, py), (px, px)), mode="edge")
    out = _sig_convolve(padded, ker, mode="valid", method="auto")
    return GrayImage(out)


def convolve2d_raw(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same as convolve2d but on bare arrays (internal fast path)."""
    kh, kw = kernel.shape
    if kh == 1 and kw == 1:
        return image * kernel[0, 0]
    py, px = kh // 2, kw // 2
    padded = np.pad(image, ((py, py), (px, px)), mode="edge")
    return _sig_convolve(padded, kernel, mode="valid", method="auto")


# ---------------------------------------------------------------------------
# error metric


def l1_error(pred: DepthMap, gt: DepthMap, mask: BinaryMask) -> tuple[float, float]:
    """Mean absolute depth error over the mask.

    Returns (absolute [m], percent-of-truth [ratio]); the percent form uses
    ground truth as the denominator.
    """
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError(
            f"l1_error: dimension mismatch {pred.shape} / {gt.shape} / {mask.shape}"
        )
    sel = mask.data
    if not sel.any():
        raise ValueError("l1_error: empty mask")
    diff = np.abs(pred.data[sel] - gt.data[sel])
    absolute = float(diff.mean())
    percent = float((diff / gt.data[sel]).mean())
    return absolute, percent


# ---------------------------------------------------------------------------
# PGM I/O (binary "P5", maxval 255 or 65535, 16-bit big-endian)

_TOKEN_RE = re.compile(rb"^\S+")


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments, then read one token
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise PgmParseError("unexpected end of header", pos)
    m = _TOKEN_RE.match(buf[pos:])
    token = m.group(0)
    return token, pos + len(token)


def write_pgm(image: GrayImage, path) -> None:
    """Write a 16-bit binary PGM; intensities must already be in [0, 1]."""
    data = image.data
    if np.any(data < 0.0) or np.any(data > 1.0):
        raise ValueError("write_pgm: intensities must be in [0, 1]")
    quant = np.round(data * 65535.0).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + quant.tobytes())


def read_pgm(path) -> GrayImage:
    """Read a binary PGM (maxval 255 or 65535) into normalized floats."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise PgmParseError(f"bad magic {buf[:2]!r}, only binary 'P5' accepted", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _read_token(buf, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise PgmParseError(f"non-integer {name} field {token!r}", pos) from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise PgmParseError(f"bad dimensions {width}x{height}", pos)
    if maxval not in (255, 65535):
        raise PgmParseError(f"unsupported maxval {maxval}", pos)
    pos += 1  # single whitespace byte after maxval
    nbytes = width * height * (2 if maxval == 65535 else 1)
    payload = buf[pos : pos + nbytes]
    if len(payload) != nbytes:
        raise PgmParseError(
            f"truncated payload, expected {nbytes} bytes, got {len(payload)}",
            pos + len(payload),
        )
    if maxval == 65535:
        raw = np.frombuffer(payload, dtype=">u2")
    else:
        raw = np.frombuffer(payload, dtype=np.uint8)
    data = raw.reshape(height, width).astype(np.float64) / maxval
    return GrayImage(data)


def write_depth(depth: DepthMap, path, scale: float = DEPTH_SCALE_M_PER_UNIT) -> None:
    """Write depth as 16-bit PGM plus a one-line `<path>.scale` sidecar."""
    units = np.round(depth.data / scale)
    if np.any(units < 1) or np.any(units > 65535):
        raise ValueError("write_depth: depth out of representable range for scale")
    quant = units.astype(">u2")
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    p = Path(path)
    p.write_bytes(header + quant.tobytes())
    Path(str(p) + ".scale").write_text(f"scale_m_per_unit={scale!r}\n")


def read_depth(path) -> DepthMap:
    """Read a depth PGM written by write_depth."""
    sidecar = Path(str(path) + ".scale").read_text().strip()
    key, _, value = sidecar.partition("=")
    if key != "scale_m_per_unit":
        raise ValueError(f"bad depth sidecar line {sidecar!r}")
    scale = float(value)
    img = read_pgm(path)
    return DepthMap(img.data * 65535.0 * scale)
