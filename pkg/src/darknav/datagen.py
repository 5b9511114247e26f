"""Synthetic training-pair generation.

Composite images are built by alpha-blending per-plane calibration images
behind randomized polygonal obstacle masks over a dim procedural background:

    I_synth = w_ref*I_ref + sum_i a_i * M_i (.) I_i + a_0 * M_0 (.) I_0 + N(0, s^2)

with the matching plane-valued ground-truth depth map.  Everything is a pure
function of (seed, config): per-pair seeds are derived from the master seed
with a splitmix64 mix, so serial and parallel runs agree byte for byte.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationSet
from .imagery import BinaryMask, DepthMap, GrayImage, write_depth, write_pgm

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def pair_seed(master_seed: int, index: int) -> int:
    """Stable per-pair seed; independent of generation order."""
    return _mix64(master_seed + _GOLDEN * (index + 1))


class DegeneratePolygonWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray  # (k, 2) pixel coords (x, y)
    plane_index: int

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        arr.flags.writeable = False
        object.__setattr__(self, "vertices", arr)

    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class SceneLimits:
    """Randomization ranges for scene synthesis (all overridable)."""

    width: int = 640
    height: int = 480
    max_polygons: int = 6
    vertex_range: tuple[int, int] = (3, 10)
    # polygon radius as a fraction of min(width, height)/2
    size_range: tuple[float, float] = (0.08, 0.45)
    alpha_range: tuple[float, float] = (0.4, 1.0)
    w_ref_range: tuple[float, float] = (0.0, 0.15)
    noise_sigma_range: tuple[float, float] = (0.005, 0.03)


@dataclass(frozen=True)
class SceneSpec:
    polygons: tuple[Polygon, ...]
    background_plane_index: int
    # alphas[0] weights the background region, alphas[i+1] weights plane i
    alphas: tuple[float, ...]
    w_ref: float
    noise_sigma: float
    seed: int
    planes: tuple[float, ...]

    def __post_init__(self):
        if not 0 <= self.background_plane_index < len(self.planes):
            raise ValueError("background_plane_index out of range")
        if len(self.alphas) != len(self.planes) + 1:
            raise ValueError("need one alpha per plane plus one for the background")
        for poly in self.polygons:
            if not 0 <= poly.plane_index < len(self.planes):
                raise ValueError(f"polygon plane_index {poly.plane_index} out of range")
        if not 0.0 <= self.w_ref <= 1.0:
            raise ValueError("w_ref must be in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class TrainingPair:
    image: GrayImage
    depth: DepthMap
    spec: SceneSpec

    def __post_init__(self):
        if self.image.shape != self.depth.shape:
            raise ValueError("image and depth dimensions differ")
        if not np.all(np.isin(self.depth.data, np.asarray(self.spec.planes))):
            raise ValueError("depth values outside the active plane set")


def random_scene(rng_seed: int, planes, limits: SceneLimits) -> SceneSpec:
    """Draw a randomized polygonal obstacle layout (deterministic per seed)."""
    planes = tuple(float(z) for z in planes)
    rng = np.random.default_rng(rng_seed)
    n_poly = int(rng.integers(0, limits.max_polygons + 1))
    w, h = limits.width, limits.height
    half = min(w, h) / 2.0
    polys = []
    for _ in range(n_poly):
        plane_index = int(rng.integers(0, len(planes)))
        radius = rng.uniform(*limits.size_range) * half
        cx = rng.uniform(radius, w - 1 - radius)
        cy = rng.uniform(radius, h - 1 - radius)
        k = int(rng.integers(limits.vertex_range[0], limits.vertex_range[1] + 1))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=k))
        radii = rng.uniform(0.5, 1.0, size=k) * radius
        verts = np.stack(
            [cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1
        )
        verts[:, 0] = np.clip(verts[:, 0], 0, w - 1)
        verts[:, 1] = np.clip(verts[:, 1], 0, h - 1)
        polys.append(Polygon(verts, plane_index))
    background_plane_index = int(rng.integers(0, len(planes)))
    alphas = tuple(rng.uniform(*limits.alpha_range, size=len(planes) + 1))
    w_ref = float(rng.uniform(*limits.w_ref_range))
    sigma = float(rng.uniform(*limits.noise_sigma_range))
    return SceneSpec(
        polygons=tuple(polys),
        background_plane_index=background_plane_index,
        alphas=alphas,
        w_ref=w_ref,
        noise_sigma=sigma,
        seed=rng_seed,
        planes=planes,
    )


def _fill_polygon(verts: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd polygon fill over integer pixel centers (vectorized)."""
    x0 = max(0, int(np.floor(verts[:, 0].min())))
    x1 = min(width - 1, int(np.ceil(verts[:, 0].max())))
    y0 = max(0, int(np.floor(verts[:, 1].min())))
    y1 = min(height - 1, int(np.ceil(verts[:, 1].max())))
    out = np.zeros((height, width), dtype=bool)
    if x1 < x0 or y1 < y0:
        return out
    xs = np.arange(x0, x1 + 1)[None, :]
    ys = np.arange(y0, y1 + 1)[:, None]
    inside = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    n = verts.shape[0]
    for i in range(n):
        xa, ya = verts[i]
        xb, yb = verts[(i + 1) % n]
        if ya == yb:
            continue
        crosses = (ya > ys) != (yb > ys)
        xi = xa + (ys - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (xs < xi)
    out[y0 : y1 + 1, x0 : x1 + 1] = inside
    return out


def rasterize_masks(
    spec: SceneSpec, dims: tuple[int, int]
) -> tuple[list[BinaryMask], BinaryMask]:
    """Per-plane obstacle masks plus the background (uncovered) mask.

    Overlapping polygons resolve nearest-plane-wins; the returned masks
    partition the frame exactly.
    """
    height, width = dims
    assign = np.full((height, width), -1, dtype=np.int32)
    # paint far to near so nearer polygons overwrite
    order = sorted(
        range(len(spec.polygons)),
        key=lambda i: spec.planes[spec.polygons[i].plane_index],
        reverse=True,
    )
    for i in order:
        poly = spec.polygons[i]
        if poly.area() < 0.5:
            warnings.warn(
                f"skipping degenerate polygon {i} (area {poly.area():.3g} px^2)",
                DegeneratePolygonWarning,
            )
            continue
        filled = _fill_polygon(poly.vertices, width, height)
        assign[filled] = poly.plane_index
    plane_masks = [BinaryMask(assign == p) for p in range(len(spec.planes))]
    background = BinaryMask(assign == -1)
    return plane_masks, background


def compose_pair(
    spec: SceneSpec, calib: CalibrationSet, background: GrayImage
) -> TrainingPair:
    """Blend calibration images through the scene masks into a training pair."""
    if not calib.images:
        raise ValueError("empty calibration set")
    dims = calib.images[0].shape
    if background.shape != dims:
        raise ValueError(
            f"background dims {background.shape} != calibration dims {dims}"
        )
    if tuple(spec.planes) != tuple(calib.planes):
        raise ValueError("scene plane set does not match the calibration set")
    plane_masks, bg_mask = rasterize_masks(spec, dims)
    img = spec.w_ref * background.data
    for p, mask in enumerate(plane_masks):
        if mask.data.any():
            img = img + spec.alphas[p + 1] * mask.data * calib.images[p].data
    img = img + (
        spec.alphas[0]
        * bg_mask.data
        * calib.images[spec.background_plane_index].data
    )
    if spec.noise_sigma > 0:
        rng = np.random.default_rng((spec.seed & _MASK64, 0xC0))
        img = img + rng.normal(0.0, spec.noise_sigma, size=dims)
    depth = np.empty(dims)
    depth[bg_mask.data] = spec.planes[spec.background_plane_index]
    for p, mask in enumerate(plane_masks):
        depth[mask.data] = spec.planes[p]
    return TrainingPair(
        image=GrayImage(np.clip(img, 0.0, 1.0)), depth=DepthMap(depth), spec=spec
    )


# ---------------------------------------------------------------------------
# backgrounds


def _bilinear_upsample(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x1)]
    c = grid[np.ix_(y1, x0)]
    d = grid[np.ix_(y1, x1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def procedural_background(
    seed: int, width: int = 640, height: int = 480, level: float = 0.1
) -> GrayImage:
    """Dim multi-octave value noise plus a random gradient, scaled to [0, level]."""
    rng = np.random.default_rng((seed & _MASK64, 0xB6))
    out = np.zeros((height, width))
    weight = 1.0
    for octave in range(3):
        cells = 4 * (2**octave)
        grid = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1))
        out += weight * _bilinear_upsample(grid, width, height)
        weight *= 0.5
    gx, gy = rng.uniform(-1.0, 1.0, size=2)
    xs = np.linspace(0.0, 1.0, width)[None, :]
    ys = np.linspace(0.0, 1.0, height)[:, None]
    out += 0.5 * (gx * xs + gy * ys)
    out -= out.min()
    peak = out.max()
    if peak > 0:
        out /= peak
    return GrayImage(out * level)


def directory_background_source(directory):
    """Background source that cycles PGM files from a directory."""
    from .imagery import read_pgm

    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise ValueError(f"no PGM files in {directory}")

    def source(seed: int, width: int, height: int) -> GrayImage:
        img = read_pgm(files[seed % len(files)])
        if img.shape != (height, width):
            raise ValueError(
                f"background {files[seed % len(files)]} is {img.shape}, "
                f"expected {(height, width)}"
            )
        return img

    return source


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class DatasetEntry:
    index: int
    seed: int
    image_file: str
    depth_file: str
    planes_id: str


@dataclass(frozen=True)
class DatasetManifest:
    directory: Path
    entries: tuple[DatasetEntry, ...]
    planes: tuple[float, ...]


def planes_id(planes) -> str:
    text = ",".join(repr(float(z)) for z in planes)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def generate_pairs(count: int, seed: int, calib: CalibrationSet,
                   background_source=procedural_background,
                   limits: SceneLimits | None = None):
    """Yield (index, TrainingPair) without touching disk."""
    if count < 1:
        raise ValueError("count must be >= 1")
    dims = calib.images[0].shape
    if limits is None:
        limits = SceneLimits(width=dims[1], height=dims[0])
    for index in range(count):
        s = pair_seed(seed, index)
        spec = random_scene(s, calib.planes, limits)
        bg = background_source(s, limits.width, limits.height)
        yield index, compose_pair(spec, calib, bg)


def generate_dataset(
    count: int,
    seed: int,
    calib: CalibrationSet,
    background_source=procedural_background,
    out_dir=None,
    limits: SceneLimits | None = None,
) -> DatasetManifest:
    """Write `count` training pairs plus a manifest under out_dir."""
    if out_dir is None:
        raise ValueError("out_dir is required")
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    pid = planes_id(calib.planes)
    entries: list[DatasetEntry] = []
    lines: list[str] = []
    try:
        for index, pair in generate_pairs(
            count, seed, calib, background_source, limits
        ):
            image_file = f"pair_{index:06d}.pgm"
            depth_file = f"pair_{index:06d}_depth.pgm"
            write_pgm(pair.image, d / image_file)
            write_depth(pair.depth, d / depth_file)
            entry = DatasetEntry(index, pair.spec.seed, image_file, depth_file, pid)
            entries.append(entry)
            lines.append(
                f"{entry.index} {entry.seed} {entry.image_file} "
                f"{entry.depth_file} {entry.planes_id}"
            )
    except OSError:
        lines.append("partial=true")
        (d / "dataset.manifest").write_text("\n".join(lines) + "\n")
        raise
    (d / "dataset.manifest").write_text("\n".join(lines) + "\n")
    meta = [f"count={count}", f"seed={seed}", f"planes_id={pid}",
            "planes=" + ",".join(repr(z) for z in calib.planes)]
    (d / "dataset.meta").write_text("\n".join(meta) + "\n")
    return DatasetManifest(directory=d, entries=tuple(entries), planes=calib.planes)


def read_manifest(directory) -> DatasetManifest:
    d = Path(directory)
    entries = []
    planes: tuple[float, ...] = ()
    for line in (d / "dataset.meta").read_text().splitlines():
        if line.startswith("planes="):
            planes = tuple(float(t) for t in line.split("=", 1)[1].split(","))
    for line in (d / "dataset.manifest").read_text().splitlines():
        if not line.strip() or line.startswith("partial="):
            continue
        idx, s, img, dep, pid = line.split()
        entries.append(DatasetEntry(int(idx), int(s), img, dep, pid))
    return DatasetManifest(directory=d, entries=tuple(entries), planes=planes)
