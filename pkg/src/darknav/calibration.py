"""Per-depth-plane calibration assets: rendered wall images and PSF banks.

A calibration set is the stack of structured-light wall images, one per
discretized depth plane; it is what the template-matching estimator searches
and what training composites are built from.  Sets are simulation-rendered
here, but the on-disk layout (manifest + per-plane 16-bit PGM) also accepts
externally captured stacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagery import GrayImage, read_pgm, write_pgm
from .optics import (
    ApertureMask,
    DotPattern,
    OpticalConfig,
    blur_diameter_px,
    parse_pattern_text,
    pattern_to_text,
    rasterize_psf,
    render_dot_wall,
)


class CalibrationLoadError(RuntimeError):
    """Calibration directory is missing files or violates the manifest."""


def _plane_tuple(planes, minimum: int = 1) -> tuple[float, ...]:
    values = tuple(float(z) for z in planes)
    if len(values) < minimum:
        raise ValueError(f"need at least {minimum} depth plane(s)")
    if any(z <= 0 for z in values):
        raise ValueError("depth planes must be > 0")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("depth planes must be strictly increasing")
    return values


@dataclass(frozen=True)
class DepthPlanes:
    """Strictly increasing set of calibrated depths (>= 2 planes)."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", _plane_tuple(self.values, minimum=2))

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def nearest_index(self, depth_m: float) -> int:
        arr = np.asarray(self.values)
        return int(np.argmin(np.abs(arr - depth_m)))

    def step(self) -> float:
        return min(b - a for a, b in zip(self.values, self.values[1:]))


def canonical_planes() -> DepthPlanes:
    """0.5 m to 2.5 m in 0.25 m steps (9 planes)."""
    return DepthPlanes(tuple(0.5 + 0.25 * i for i in range(9)))


@dataclass(frozen=True)
class CalibrationSet:
    planes: tuple[float, ...]
    images: tuple[GrayImage, ...]
    pattern: DotPattern
    cfg: OpticalConfig
    mask_id: str

    def __post_init__(self):
        planes = _plane_tuple(self.planes)
        object.__setattr__(self, "planes", planes)
        images = tuple(self.images)
        if len(images) != len(planes):
            raise ValueError(
                f"{len(images)} images for {len(planes)} planes"
            )
        dims = {img.shape for img in images}
        if len(dims) > 1:
            raise ValueError(f"calibration images disagree on dimensions: {dims}")
        object.__setattr__(self, "images", images)


@dataclass(frozen=True)
class PsfBank:
    planes: tuple[float, ...]
    kernels: tuple[GrayImage, ...]

    def __post_init__(self):
        planes = _plane_tuple(self.planes)
        object.__setattr__(self, "planes", planes)
        kernels = tuple(self.kernels)
        if len(kernels) != len(planes):
            raise ValueError(f"{len(kernels)} kernels for {len(planes)} planes")
        for z, k in zip(planes, kernels):
            if abs(k.data.sum() - 1.0) > 1e-9:
                raise ValueError(f"kernel for plane {z} is not normalized")
        object.__setattr__(self, "kernels", kernels)


def build_calibration_set(
    cfg: OpticalConfig, mask: ApertureMask, pattern: DotPattern, planes
) -> CalibrationSet:
    planes = _plane_tuple(planes)
    images = tuple(render_dot_wall(pattern, cfg, mask, z) for z in planes)
    return CalibrationSet(
        planes=planes, images=images, pattern=pattern, cfg=cfg, mask_id=mask.name
    )


def build_psf_bank(cfg: OpticalConfig, mask: ApertureMask, planes) -> PsfBank:
    planes = _plane_tuple(planes)
    kernels = tuple(rasterize_psf(mask, blur_diameter_px(cfg, z)) for z in planes)
    return PsfBank(planes=planes, kernels=kernels)


# ---------------------------------------------------------------------------
# persistence

_MANIFEST = "manifest.txt"
_PATTERN_FILE = "pattern.txt"

_CFG_FIELDS = (
    "focal_length",
    "f_number",
    "focus_distance",
    "pixel_pitch",
    "sensor_width",
    "sensor_height",
)


def save_calibration(cal: CalibrationSet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    cfg_tokens = " ".join(f"{k}={getattr(cal.cfg, k)!r}" for k in _CFG_FIELDS)
    lines.append(f"cfg {cfg_tokens}")
    lines.append(f"mask_id={cal.mask_id}")
    lines.append(f"pattern_file={_PATTERN_FILE}")
    for i, (z, img) in enumerate(zip(cal.planes, cal.images)):
        fname = f"plane_{i:03d}.pgm"
        write_pgm(img, d / fname)
        lines.append(f"plane_m={z!r} file={fname}")
    (d / _PATTERN_FILE).write_text(pattern_to_text(cal.pattern))
    (d / _MANIFEST).write_text("\n".join(lines) + "\n")


def load_calibration(directory) -> CalibrationSet:
    d = Path(directory)
    manifest = d / _MANIFEST
    if not manifest.is_file():
        raise CalibrationLoadError(f"missing {_MANIFEST} in {d}")
    cfg_kwargs: dict = {}
    mask_id = "unknown"
    pattern_file = _PATTERN_FILE
    planes: list[float] = []
    files: list[str] = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("cfg "):
            for tok in line[4:].split():
                k, _, v = tok.partition("=")
                cfg_kwargs[k] = int(v) if k.startswith("sensor_") else float(v)
        elif line.startswith("mask_id="):
            mask_id = line.split("=", 1)[1]
        elif line.startswith("pattern_file="):
            pattern_file = line.split("=", 1)[1]
        elif line.startswith("plane_m="):
            ztok, ftok = line.split()
            planes.append(float(ztok.split("=", 1)[1]))
            files.append(ftok.split("=", 1)[1])
        else:
            raise CalibrationLoadError(f"unrecognized manifest line: {line!r}")
    if any(b <= a for a, b in zip(planes, planes[1:])):
        raise CalibrationLoadError(
            f"manifest planes are not strictly increasing: {planes}"
        )
    images = []
    for z, fname in zip(planes, files):
        fpath = d / fname
        if not fpath.is_file():
            raise CalibrationLoadError(f"missing image for plane {z} m: {fname}")
        images.append(read_pgm(fpath))
    ppath = d / pattern_file
    if not ppath.is_file():
        raise CalibrationLoadError(f"missing pattern file {pattern_file}")
    pattern = parse_pattern_text(ppath.read_text())
    cfg = OpticalConfig(**cfg_kwargs)
    return CalibrationSet(
        planes=tuple(planes),
        images=tuple(images),
        pattern=pattern,
        cfg=cfg,
        mask_id=mask_id,
    )
