"""Physical defocus model: blur-circle geometry, coded-aperture PSF
rasterization, and depth-dependent rendering of structured-light scenes.

The thin-lens blur circle for a point source at depth Z with the camera
focused at Z_f is

    s = f^2 * |Z - Z_f| / (N * (Z_f - f) * Z)

with focal length f and aperture number N.  The PSF at a given depth is the
aperture mask scaled so its physical footprint spans s (in pixels) and
area-resampled onto an odd-sided pixel grid; a coded mask therefore produces
depth-dependent *structured* blur rather than a uniform disk.

Scenes are rendered layer-by-layer: each depth plane is convolved with its
own PSF and composited near-over-far.  Occlusion-boundary blur bleeding is
deliberately ignored; this matches the alpha-matted synthesis used for
training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .imagery import GrayImage, DepthMap, convolve2d_raw

# Nominal sensor width used to relate a pattern's pixel-unit dot radius to
# its normalized coordinates.
NOMINAL_SENSOR_WIDTH = 640


@dataclass(frozen=True)
class OpticalConfig:
    focal_length: float  # meters
    f_number: float
    focus_distance: float  # meters
    pixel_pitch: float  # meters per pixel
    sensor_width: int = 640
    sensor_height: int = 480

    def __post_init__(self):
        if self.focal_length <= 0:
            raise ValueError("focal_length must be > 0")
        if self.f_number <= 0:
            raise ValueError("f_number must be > 0")
        if self.focus_distance <= self.focal_length:
            raise ValueError("focus_distance must exceed focal_length")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be > 0")
        if self.sensor_width < 1 or self.sensor_height < 1:
            raise ValueError("sensor dimensions must be >= 1")

    @property
    def focal_px(self) -> float:
        return self.focal_length / self.pixel_pitch


# 16 mm f/1.4 lens focused at 0.5 m; pixel pitch normalized so the blur
# circle at 2.5 m spans ~21 px on a 640x480 frame.
def default_config(
    f_number: float = 1.4, focus_distance: float = 0.5,
    sensor_width: int = 640, sensor_height: int = 480,
) -> OpticalConfig:
    scale = sensor_width / 640.0
    return OpticalConfig(
        focal_length=0.016,
        f_number=f_number,
        focus_distance=focus_distance,
        pixel_pitch=1.44e-5 / scale,
        sensor_width=sensor_width,
        sensor_height=sensor_height,
    )


PINHOLE_F_NUMBER = 8.0  # stopped-down comparison aperture
OPEN_F_NUMBER = 1.4


@dataclass(frozen=True)
class ApertureMask:
    """Binary aperture code on an odd-sided cell grid."""

    cells: np.ndarray
    physical_diameter_mm: float = 6.0
    name: str = "mask"

    def __post_init__(self):
        arr = np.asarray(self.cells)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("aperture cells must form a square grid")
        if arr.shape[0] % 2 == 0:
            raise ValueError("aperture grid side must be odd")
        if not np.all(np.isin(arr, (0, 1))):
            raise ValueError("aperture cells must be binary")
        if not arr.any():
            raise ValueError("aperture must have at least one open cell")
        if self.physical_diameter_mm <= 0:
            raise ValueError("physical_diameter_mm must be > 0")
        arr = np.ascontiguousarray(arr.astype(np.float64))
        arr.flags.writeable = False
        object.__setattr__(self, "cells", arr)

    @property
    def side(self) -> int:
        return self.cells.shape[0]


def coded_mask() -> ApertureMask:
    """Default 7x7 coded aperture, shipped as a package asset."""
    text = resources.files("darknav.assets").joinpath("coded_mask_7x7.txt").read_text()
    return parse_mask_text(text, name="coded")


def disk_mask(cells: int = 21) -> ApertureMask:
    """Fully open circular aperture approximated on a cell grid."""
    if cells % 2 == 0:
        cells += 1
    c = (cells - 1) / 2.0
    yy, xx = np.mgrid[0:cells, 0:cells]
    grid = ((xx - c) ** 2 + (yy - c) ** 2 <= (cells / 2.0) ** 2).astype(np.int64)
    return ApertureMask(grid, name="disk")


def parse_mask_text(text: str, name: str = "mask") -> ApertureMask:
    """Parse the mask asset format: `diameter_mm=<float>` then 0/1 rows."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("diameter_mm="):
        raise ValueError("mask file must start with a diameter_mm= header")
    diameter = float(lines[0].split("=", 1)[1])
    rows = [[int(ch) for ch in ln.replace(" ", "")] for ln in lines[1:]]
    return ApertureMask(np.array(rows), physical_diameter_mm=diameter, name=name)


def mask_to_text(mask: ApertureMask) -> str:
    rows = ["".join(str(int(v)) for v in row) for row in mask.cells]
    return f"diameter_mm={mask.physical_diameter_mm}\n" + "\n".join(rows) + "\n"


def load_mask(path, name: str | None = None) -> ApertureMask:
    p = Path(path)
    return parse_mask_text(p.read_text(), name=name or p.stem)


# ---------------------------------------------------------------------------
# dot patterns


@dataclass(frozen=True)
class DotPattern:
    """Sparse projector dot layout in normalized [0,1]^2 coordinates."""

    dots: np.ndarray  # (n, 2) array of (u, v)
    dot_radius_px: float = 1.5
    intensity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        arr = np.asarray(self.dots, dtype=np.float64).reshape(-1, 2)
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("dot positions must lie in [0,1]^2")
        if self.dot_radius_px <= 0:
            raise ValueError("dot_radius_px must be > 0")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must be in [0,1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "dots", arr)

    def __len__(self) -> int:
        return self.dots.shape[0]

    def pixel_positions(self, width: int, height: int) -> np.ndarray:
        """Dot centers in pixel coordinates (x, y) for a given frame size."""
        out = np.empty_like(self.dots)
        out[:, 0] = self.dots[:, 0] * (width - 1)
        out[:, 1] = self.dots[:, 1] * (height - 1)
        return out


def random_dot_pattern(
    seed: int,
    count: int = 300,
    dot_radius_px: float = 1.5,
    min_separation: float = 0.03,
    intensity: float = 1.0,
    margin: float = 0.02,
) -> DotPattern:
    """Blue-noise dot layout via dart throwing with a minimum separation.

    Separation is enforced in normalized units and must keep dots from
    touching at the nominal sensor width (>= 2 * dot_radius in pixels).
    """
    floor = 2.0 * dot_radius_px / NOMINAL_SENSOR_WIDTH
    if min_separation < floor:
        raise ValueError(f"min_separation {min_separation} below 2x dot radius {floor}")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    attempts = 0
    max_attempts = count * 200
    while len(accepted) < count and attempts < max_attempts:
        p = rng.uniform(margin, 1.0 - margin, size=2)
        attempts += 1
        if accepted:
            d2 = np.min(np.sum((np.array(accepted) - p) ** 2, axis=1))
            if d2 < min_separation**2:
                continue
        accepted.append(p)
    return DotPattern(
        np.array(accepted), dot_radius_px=dot_radius_px, intensity=intensity, seed=seed
    )


def pattern_to_text(pattern: DotPattern) -> str:
    header = (
        f"seed={pattern.seed} radius_px={pattern.dot_radius_px} "
        f"intensity={pattern.intensity}\n"
    )
    body = "".join(f"{u!r} {v!r}\n" for u, v in pattern.dots)
    return header + body


def parse_pattern_text(text: str) -> DotPattern:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty dot pattern file")
    fields = dict(tok.split("=", 1) for tok in lines[0].split())
    dots = [[float(x) for x in ln.split()] for ln in lines[1:]]
    return DotPattern(
        np.array(dots).reshape(-1, 2),
        dot_radius_px=float(fields["radius_px"]),
        intensity=float(fields.get("intensity", 1.0)),
        seed=int(fields["seed"]),
    )


# ---------------------------------------------------------------------------
# blur geometry and PSF rasterization


def blur_diameter(cfg: OpticalConfig, depth_m: float) -> float:
    """Blur circle diameter (meters) for a point source at depth_m."""
    if depth_m <= 0:
        raise ValueError(f"depth must be > 0, got {depth_m}")
    f = cfg.focal_length
    numer = f * f * abs(depth_m - cfg.focus_distance)
    denom = cfg.f_number * (cfg.focus_distance - f) * depth_m
    return numer / denom


def blur_diameter_px(cfg: OpticalConfig, depth_m: float) -> float:
    return blur_diameter(cfg, depth_m) / cfg.pixel_pitch


def _overlap_matrix(side: int, span: float, cells: int) -> np.ndarray:
    """Per-axis overlap lengths between kernel pixels and mask cells.

    The mask's [0, span] extent is centered on the kernel's [0, side] extent;
    entry (i, c) is the length of intersection between pixel i's interval and
    cell c's interval.
    """
    lo = (side - span) / 2.0
    cell = span / cells
    pix_lo = np.arange(side)[:, None]
    pix_hi = pix_lo + 1.0
    cell_lo = lo + np.arange(cells)[None, :] * cell
    cell_hi = cell_lo + cell
    return np.clip(np.minimum(pix_hi, cell_hi) - np.maximum(pix_lo, cell_lo), 0.0, None)


def rasterize_psf(mask: ApertureMask, blur_px: float) -> GrayImage:
    """Rasterize the aperture mask into a normalized PSF kernel.

    The kernel side is the smallest odd integer >= blur_px; the mask's open
    cells span exactly blur_px pixels, area-weighted onto the grid.  Any blur
    of one pixel or less collapses to the 1x1 identity kernel.
    """
    if blur_px < 0:
        raise ValueError("blur_px must be >= 0")
    if not mask.cells.any():
        raise ValueError("aperture mask has no open cells")
    if blur_px <= 1.0:
        return GrayImage(np.ones((1, 1)))
    side = int(math.ceil(blur_px))
    if side % 2 == 0:
        side += 1
    ov = _overlap_matrix(side, blur_px, mask.side)
    kernel = ov @ mask.cells @ ov.T
    total = kernel.sum()
    if total <= 0:
        raise ValueError("degenerate PSF: no open area inside kernel")
    return GrayImage(kernel / total)


# ---------------------------------------------------------------------------
# rendering


def stamp_spots(
    width: int,
    height: int,
    positions_px: np.ndarray,
    amplitudes: np.ndarray,
    sigma_px: float,
) -> np.ndarray:
    """Additively splat Gaussian spots at float pixel positions."""
    img = np.zeros((height, width))
    if positions_px.size == 0:
        return img
    r = max(1, int(math.ceil(4.0 * sigma_px)))
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for (x, y), amp in zip(positions_px, amplitudes):
        cx, cy = int(round(x)), int(round(y))
        x0, x1 = max(0, cx - r), min(width, cx + r + 1)
        y0, y1 = max(0, cy - r), min(height, cy + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) - x
        ys = np.arange(y0, y1) - y
        img[y0:y1, x0:x1] += amp * np.exp(
            -(ys[:, None] ** 2 + xs[None, :] ** 2) * inv
        )
    return img


def render_depth_scene(
    aif: GrayImage,
    depth: DepthMap,
    cfg: OpticalConfig,
    mask: ApertureMask,
    planes,
) -> GrayImage:
    """Defocus an all-in-focus image given a plane-quantized depth map.

    Each plane's pixels are convolved with that plane's PSF and composited
    near-over-far with blurred alpha; output is clamped to [0, 1].
    """
    plane_values = np.asarray(list(planes), dtype=np.float64)
    if aif.shape != depth.shape:
        raise ValueError(f"dimension mismatch {aif.shape} vs {depth.shape}")
    if not np.all(np.isin(depth.data, plane_values)):
        raise ValueError("depth map contains values outside the plane set")
    out = np.zeros(aif.shape)
    # far to near so near layers composite over far ones
    for z in sorted(plane_values, reverse=True):
        sel = depth.data == z
        if not sel.any():
            continue
        psf = rasterize_psf(mask, blur_diameter_px(cfg, z)).data
        layer = convolve2d_raw(aif.data * sel, psf)
        alpha = convolve2d_raw(sel.astype(np.float64), psf)
        out = layer + (1.0 - np.clip(alpha, 0.0, 1.0)) * out
    return GrayImage(np.clip(out, 0.0, 1.0))


# Reference distance for the inverse-square falloff of projected dots.
FALLOFF_REFERENCE_M = 0.5


def render_dot_wall(
    pattern: DotPattern, cfg: OpticalConfig, mask: ApertureMask, depth_m: float
) -> GrayImage:
    """Render the dot pattern on a fronto-parallel wall at depth_m.

    Dots are stamped as Gaussian spots (sigma = radius/2), dimmed by
    inverse-square falloff, then defocused at the wall's depth.
    """
    if depth_m <= 0:
        raise ValueError(f"depth must be > 0, got {depth_m}")
    w, h = cfg.sensor_width, cfg.sensor_height
    falloff = (FALLOFF_REFERENCE_M / depth_m) ** 2
    amps = np.full(len(pattern), pattern.intensity * falloff)
    spots = stamp_spots(
        w, h, pattern.pixel_positions(w, h), amps, pattern.dot_radius_px / 2.0
    )
    aif = GrayImage(spots)
    depth = DepthMap(np.full((h, w), depth_m))
    return render_depth_scene(aif, depth, cfg, mask, (depth_m,))
