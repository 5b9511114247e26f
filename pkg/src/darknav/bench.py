"""Benchtop-style experiments: two-plane scenes, aperture and estimator
comparisons, and the emitter-offset robustness sweep.

A benchtop scene puts a focused foreground obstacle over roughly half the
frame with the background at a farther plane, mirroring the physical
protocol: composite the two calibration images through a half-frame polygon
mask, add sensor noise, estimate, and score l1 against the plane-valued
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationSet, build_calibration_set
from .datagen import Polygon, SceneSpec, compose_pair, procedural_background
from .estimation import (
    DepthEstimate,
    TmGridSpec,
    dog_depth,
    infer_patch_model,
    tm_depth,
)
from .imagery import BinaryMask, DepthMap, GrayImage, l1_error
from .optics import (
    ApertureMask,
    OPEN_F_NUMBER,
    PINHOLE_F_NUMBER,
    coded_mask,
    default_config,
    disk_mask,
)

APERTURES: tuple[str, ...] = ("coded", "open", "pinhole")


def aperture_setup(name: str, focus_distance: float,
                   sensor_width: int = 640, sensor_height: int = 480):
    """(OpticalConfig, ApertureMask) for one of the benchmark apertures."""
    if name == "coded":
        mask, f_number = coded_mask(), OPEN_F_NUMBER
    elif name == "open":
        mask, f_number = disk_mask(), OPEN_F_NUMBER
    elif name == "pinhole":
        mask, f_number = disk_mask(), PINHOLE_F_NUMBER
    else:
        raise ValueError(f"unknown aperture {name!r}, expected one of {APERTURES}")
    cfg = default_config(
        f_number=f_number,
        focus_distance=focus_distance,
        sensor_width=sensor_width,
        sensor_height=sensor_height,
    )
    return cfg, mask


def benchtop_scene(
    calib: CalibrationSet,
    fg_index: int,
    bg_index: int,
    seed: int,
    noise_sigma: float = 0.005,
) -> SceneSpec:
    """Half-frame foreground polygon at fg_index over background at bg_index."""
    dims = calib.images[0].shape
    h, w = dims
    rng = np.random.default_rng((seed, 0xBE))
    xb = w * (0.5 + rng.uniform(-0.04, 0.04))
    x_top = float(np.clip(xb + rng.uniform(-0.03, 0.03) * w, 1, w - 2))
    x_bot = float(np.clip(xb + rng.uniform(-0.03, 0.03) * w, 1, w - 2))
    poly = Polygon(
        np.array(
            [[0.0, 0.0], [x_top, 0.0], [x_bot, h - 1.0], [0.0, h - 1.0]]
        ),
        plane_index=fg_index,
    )
    alphas = tuple(rng.uniform(0.7, 1.0, size=len(calib.planes) + 1))
    return SceneSpec(
        polygons=(poly,),
        background_plane_index=bg_index,
        alphas=alphas,
        w_ref=float(rng.uniform(0.0, 0.1)),
        noise_sigma=noise_sigma,
        seed=seed,
        planes=calib.planes,
    )


def _full_mask(shape) -> BinaryMask:
    return BinaryMask(np.ones(shape, dtype=bool))


def benchtop_l1(
    calib: CalibrationSet,
    estimate_fn,
    fg_index: int,
    bg_index: int,
    seeds,
    noise_sigma: float = 0.005,
) -> tuple[float, float]:
    """Mean (absolute, percent) l1 of an estimator over seeded benchtop scenes."""
    abs_sum = pct_sum = 0.0
    for seed in seeds:
        spec = benchtop_scene(calib, fg_index, bg_index, seed, noise_sigma)
        dims = calib.images[0].shape
        bg = procedural_background(seed, dims[1], dims[0])
        pair = compose_pair(spec, calib, bg)
        est: DepthEstimate = estimate_fn(pair)
        a, p = l1_error(est.depth, pair.depth, _full_mask(dims))
        abs_sum += a
        pct_sum += p
    n = len(list(seeds))
    return abs_sum / n, pct_sum / n


def tm_estimator_fn(calib: CalibrationSet, grid: TmGridSpec = TmGridSpec()):
    def fn(pair):
        return tm_depth(pair.image, calib, grid)

    return fn


def dog_estimator_fn(calib: CalibrationSet, cfg, threshold: float = 0.01):
    def fn(pair):
        z_fg = pair.spec.planes[pair.spec.polygons[0].plane_index]
        z_bg = pair.spec.planes[pair.spec.background_plane_index]
        return dog_depth(pair.image, cfg, z_fg, z_bg, threshold)

    return fn


def patch_estimator_fn(model, calib: CalibrationSet):
    dims = calib.images[0].shape
    dots = calib.pattern.pixel_positions(dims[1], dims[0])

    def fn(pair):
        return infer_patch_model(model, pair.image, dots)

    return fn


@dataclass(frozen=True)
class BenchRow:
    aperture: str
    estimator: str
    z_f: float
    z_fg: float
    z_bg: float
    l1_abs: float
    l1_pct: float


def aperture_benchmark(
    pattern,
    planes,
    z_f_list,
    z_b_list,
    seeds,
    noise_sigma: float = 0.005,
    apertures=APERTURES,
    grid: TmGridSpec = TmGridSpec(),
) -> list[BenchRow]:
    """TM l1 across apertures and (Z_f = Z_fg, Z_B) grid points (Z_fg focused)."""
    plane_list = tuple(planes)
    rows = []
    for name in apertures:
        for z_f in z_f_list:
            cfg, mask = aperture_setup(name, z_f)
            calib = build_calibration_set(cfg, mask, pattern, plane_list)
            fg_index = plane_list.index(z_f)
            fn = tm_estimator_fn(calib, grid)
            for z_b in z_b_list:
                bg_index = plane_list.index(z_b)
                a, p = benchtop_l1(calib, fn, fg_index, bg_index, seeds, noise_sigma)
                rows.append(BenchRow(name, "tm", z_f, z_f, z_b, a, p))
    return rows


def quantize_to_planes(depth: DepthMap, planes) -> DepthMap:
    arr = np.asarray(tuple(planes))
    idx = np.argmin(np.abs(depth.data[..., None] - arr[None, None, :]), axis=-1)
    return DepthMap(arr[idx])
