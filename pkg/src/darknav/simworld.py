"""Closed-loop dark-world simulator.

World frame: x is the corridor (initial forward) axis, y is rightward, z is
up.  The robot is a first-order kinematic point with a body radius; yaw
rotates body-forward from +x toward +y, so the body command (v_forward,
v_lateral, v_vertical) maps to world velocity R_z(yaw) * (v_f, v_lat) plus a
vertical component.

Sensing is simulated end-to-end: each projector dot is ray-cast into the
scene, the hit is projected back into the camera (with optional
emitter-camera offset), its depth is quantized to the nearest calibrated
plane, and the spot is stamped and defocused with that plane's PSF.  No hit
means no light comes back; the ambient floor stays at starlight level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibration import CalibrationSet
from .estimation import DepthEstimate
from .imagery import DepthMap, FAR_CAP_M, GrayImage, convolve2d_raw
from .navigation import NavCommand, NavConfig, potential_field_cmd, segment_fg_bg
from .optics import (
    ApertureMask,
    DotPattern,
    FALLOFF_REFERENCE_M,
    OpticalConfig,
    blur_diameter_px,
    rasterize_psf,
    stamp_spots,
)

_EPS = 1e-12


# ---------------------------------------------------------------------------
# obstacles and scenes


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # full extents
    reflectivity: float = 0.5


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on z=0."""

    cx: float
    cy: float
    radius: float
    height: float
    reflectivity: float = 0.5


@dataclass(frozen=True)
class Capsule:
    """Cylinder with spherical caps between two endpoints (ropes, pipes)."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    reflectivity: float = 0.5


Obstacle = Box | Cylinder | Capsule


@dataclass(frozen=True)
class WorldScene:
    bounds_min: tuple[float, float, float]
    bounds_max: tuple[float, float, float]
    obstacles: tuple[Obstacle, ...] = ()

    def __post_init__(self):
        lo, hi = self.bounds_min, self.bounds_max
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("bounds_max must exceed bounds_min on every axis")
        for ob in self.obstacles:
            if isinstance(ob, Box):
                if any(s <= 0 for s in ob.size):
                    raise ValueError("box sizes must be > 0")
            elif isinstance(ob, (Cylinder, Capsule)):
                if ob.radius <= 0:
                    raise ValueError("radius must be > 0")
            if not 0.0 < ob.reflectivity <= 1.0:
                raise ValueError("reflectivity must be in (0, 1]")


@dataclass(frozen=True)
class RobotState:
    position: tuple[float, float, float]
    yaw: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    body_radius: float = 0.15

    def __post_init__(self):
        if self.body_radius <= 0:
            raise ValueError("body_radius must be > 0")


@dataclass(frozen=True)
class TrialResult:
    success: bool
    failure_kind: str  # collision | out_of_bounds | timeout | none
    path: tuple[tuple[float, RobotState], ...]
    min_clearance: float

    def __post_init__(self):
        if self.success != (self.failure_kind == "none"):
            raise ValueError("success must match failure_kind == 'none'")


# ---------------------------------------------------------------------------
# ray casting

def _basis(yaw: float):
    c, s = math.cos(yaw), math.sin(yaw)
    fwd = np.array([c, s, 0.0])
    right = np.array([-s, c, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    return fwd, right, up


def _ray_box(origin, dirs, box: Box) -> np.ndarray:
    lo = np.asarray(box.center) - np.asarray(box.size) / 2.0
    hi = np.asarray(box.center) + np.asarray(box.size) / 2.0
    t0 = np.full(dirs.shape[0], -np.inf)
    t1 = np.full(dirs.shape[0], np.inf)
    for ax in range(3):
        d = dirs[:, ax]
        o = origin[ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[ax] - o) / d
            tb = (hi[ax] - o) / d
        near = np.minimum(ta, tb)
        far = np.maximum(ta, tb)
        parallel = np.abs(d) < _EPS
        inside = (o >= lo[ax]) & (o <= hi[ax])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)
    hit = (t0 <= t1) & (t1 > 0)
    t = np.where(t0 > 0, t0, t1)  # inside the box: exit distance
    return np.where(hit, t, np.inf)


def _ray_cylinder(origin, dirs, cyl: Cylinder) -> np.ndarray:
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    fx, fy = ox - cyl.cx, oy - cyl.cy
    a = dx * dx + dy * dy
    b = 2.0 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - cyl.radius**2
    disc = b * b - 4.0 * a * c
    t_best = np.full(dirs.shape[0], np.inf)
    ok = (disc >= 0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        t = np.where(ok, (-b + sign * sq) / (2.0 * np.where(a > _EPS, a, 1.0)), np.inf)
        z = oz + t * dz
        valid = ok & (t > 0) & (z >= 0.0) & (z <= cyl.height)
        t_best = np.where(valid & (t < t_best), t, t_best)
    # top cap (flight altitude can exceed obstacle height)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = (cyl.height - oz) / dz
    px = ox + t_cap * dx - cyl.cx
    py = oy + t_cap * dy - cyl.cy
    valid = (np.abs(dz) > _EPS) & (t_cap > 0) & (px * px + py * py <= cyl.radius**2)
    t_best = np.where(valid & (t_cap < t_best), t_cap, t_best)
    return t_best


def _ray_capsule(origin, dirs, cap: Capsule) -> np.ndarray:
    pa = np.asarray(cap.p0)
    pb = np.asarray(cap.p1)
    ba = pb - pa
    oa = origin - pa
    baba = float(ba @ ba)
    bard = dirs @ ba
    baoa = float(oa @ ba)
    rdoa = dirs @ oa
    oaoa = float(oa @ oa)
    r2 = cap.radius**2
    a = baba * np.einsum("ij,ij->i", dirs, dirs) - bard * bard
    b = baba * rdoa - baoa * bard
    c = baba * oaoa - baoa * baoa - r2 * baba
    h = b * b - a * c
    t_best = np.full(dirs.shape[0], np.inf)
    ok = (h >= 0) & (np.abs(a) > _EPS)
    t = np.where(ok, (-b - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, a, 1.0), np.inf)
    y = baoa + t * bard
    body = ok & (t > 0) & (y >= 0.0) & (y <= baba)
    t_best = np.where(body & (t < t_best), t, t_best)
    # spherical caps
    for center in (pa, pb):
        oc = origin - center
        bq = dirs @ oc
        cq = float(oc @ oc) - r2
        dd = np.einsum("ij,ij->i", dirs, dirs)
        disc = bq * bq - dd * cq
        okc = disc >= 0
        tc = np.where(okc, (-bq - np.sqrt(np.where(okc, disc, 0.0))) / dd, np.inf)
        valid = okc & (tc > 0)
        t_best = np.where(valid & (tc < t_best), tc, t_best)
    return t_best


def _cast(origin: np.ndarray, dirs: np.ndarray, scene: WorldScene):
    """First-hit parameter and obstacle index for a bundle of rays."""
    t_best = np.full(dirs.shape[0], np.inf)
    idx = np.full(dirs.shape[0], -1, dtype=np.int64)
    for i, ob in enumerate(scene.obstacles):
        if isinstance(ob, Box):
            t = _ray_box(origin, dirs, ob)
        elif isinstance(ob, Cylinder):
            t = _ray_cylinder(origin, dirs, ob)
        else:
            t = _ray_capsule(origin, dirs, ob)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        idx = np.where(closer, i, idx)
    return t_best, idx


def raycast_depth(scene: WorldScene, robot: RobotState, cfg: OpticalConfig) -> DepthMap:
    """Pinhole ground-truth depth: per-pixel along-axis range to the first hit,
    far-capped where nothing is hit."""
    w, h = cfg.sensor_width, cfg.sensor_height
    fwd, right, up = _basis(robot.yaw)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    # unnormalized directions with unit forward component: ray parameter t is
    # exactly the along-axis depth
    dirs = (
        fwd[None, :]
        + ((us.ravel() - cx) / cfg.focal_px)[:, None] * right[None, :]
        - ((vs.ravel() - cy) / cfg.focal_px)[:, None] * up[None, :]
    )
    t, _ = _cast(np.asarray(robot.position, dtype=np.float64), dirs, scene)
    depth = np.where(np.isfinite(t), t, FAR_CAP_M)
    depth = np.clip(depth, 1e-3, FAR_CAP_M)
    return DepthMap(depth.reshape(h, w))


# ---------------------------------------------------------------------------
# sensor simulation


class SensorRenderer:
    """Structured-light camera simulator with a precomputed PSF bank."""

    def __init__(
        self,
        cfg: OpticalConfig,
        mask: ApertureMask,
        pattern: DotPattern,
        planes,
        projector_offset_body: tuple[float, float, float] = (0.0, 0.0, 0.0),
        ambient: float = 0.002,
    ):
        self.cfg = cfg
        self.pattern = pattern
        self.planes = tuple(float(z) for z in planes)
        self.offset = np.asarray(projector_offset_body, dtype=np.float64)
        self.ambient = float(ambient)
        self.psfs = [
            rasterize_psf(mask, blur_diameter_px(cfg, z)).data for z in self.planes
        ]

    def __call__(self, scene: WorldScene, robot: RobotState) -> GrayImage:
        cfg = self.cfg
        w, h = cfg.sensor_width, cfg.sensor_height
        fwd, right, up = _basis(robot.yaw)
        cam = np.asarray(robot.position, dtype=np.float64)
        proj = cam + self.offset[0] * fwd + self.offset[1] * right + self.offset[2] * up
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        px = self.pattern.pixel_positions(w, h)
        dirs = (
            fwd[None, :]
            + ((px[:, 0] - cx) / cfg.focal_px)[:, None] * right[None, :]
            - ((px[:, 1] - cy) / cfg.focal_px)[:, None] * up[None, :]
        )
        t, which = _cast(proj, dirs, scene)
        hit = np.isfinite(t)
        out = np.zeros((h, w))
        if hit.any():
            points = proj[None, :] + t[hit, None] * dirs[hit]
            refl = np.array(
                [scene.obstacles[i].reflectivity for i in which[hit]]
            )
            q = points - cam[None, :]
            xb = q @ fwd
            yb = q @ right
            zb = q @ up
            good = xb > 0.05
            # camera-side occlusion: the hit must be the first thing the
            # camera sees along its own ray
            if good.any():
                cam_dirs = q[good] / xb[good, None]
                t_vis, _ = _cast(cam, cam_dirs, scene)
                good_idx = np.nonzero(good)[0]
                blocked = t_vis < xb[good] - 1e-6
                good[good_idx[blocked]] = False
            u = cx + cfg.focal_px * yb / np.maximum(xb, _EPS)
            v = cy - cfg.focal_px * zb / np.maximum(xb, _EPS)
            good &= (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
            if good.any():
                depth = xb[good]
                plane_idx = np.argmin(
                    np.abs(depth[:, None] - np.asarray(self.planes)[None, :]), axis=1
                )
                amps = (
                    refl[good]
                    * self.pattern.intensity
                    * (FALLOFF_REFERENCE_M / depth) ** 2
                )
                positions = np.stack([u[good], v[good]], axis=1)
                sigma = self.pattern.dot_radius_px / 2.0
                for pi in np.unique(plane_idx):
                    sel = plane_idx == pi
                    spots = stamp_spots(w, h, positions[sel], amps[sel], sigma)
                    out += convolve2d_raw(spots, self.psfs[pi])
        return GrayImage(np.clip(out + self.ambient, 0.0, 1.0))


def render_sensor_image(
    scene: WorldScene,
    robot: RobotState,
    projector_pose_offset,
    cfg: OpticalConfig,
    mask: ApertureMask,
    pattern: DotPattern,
    planes,
    ambient: float = 0.002,
) -> GrayImage:
    renderer = SensorRenderer(cfg, mask, pattern, planes, projector_pose_offset, ambient)
    return renderer(scene, robot)


# ---------------------------------------------------------------------------
# clearance / collision


def _dist_point_box(p: np.ndarray, box: Box) -> float:
    lo = np.asarray(box.center) - np.asarray(box.size) / 2.0
    hi = np.asarray(box.center) + np.asarray(box.size) / 2.0
    d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    outside = float(np.linalg.norm(d))
    if outside > 0:
        return outside
    return -float(np.min(np.minimum(p - lo, hi - p)))  # negative inside


def _dist_point_cylinder(p: np.ndarray, cyl: Cylinder) -> float:
    radial = math.hypot(p[0] - cyl.cx, p[1] - cyl.cy) - cyl.radius
    if 0.0 <= p[2] <= cyl.height:
        return radial if radial > 0 else max(radial, -min(p[2], cyl.height - p[2]))
    dz = max(0.0 - p[2], p[2] - cyl.height)
    return math.hypot(max(radial, 0.0), dz) if radial > -cyl.radius else dz


def _dist_point_capsule(p: np.ndarray, cap: Capsule) -> float:
    a = np.asarray(cap.p0)
    b = np.asarray(cap.p1)
    ab = b - a
    t = float(np.clip((p - a) @ ab / max(float(ab @ ab), _EPS), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab))) - cap.radius


def clearance(scene: WorldScene, position) -> float:
    """Distance from a point to the nearest obstacle surface (negative inside)."""
    p = np.asarray(position, dtype=np.float64)
    best = math.inf
    for ob in scene.obstacles:
        if isinstance(ob, Box):
            d = _dist_point_box(p, ob)
        elif isinstance(ob, Cylinder):
            d = _dist_point_cylinder(p, ob)
        else:
            d = _dist_point_capsule(p, ob)
        best = min(best, d)
    return best


# ---------------------------------------------------------------------------
# kinematics


def step(robot: RobotState, cmd: NavCommand, dt: float,
         nav_cfg: NavConfig | None = None) -> RobotState:
    """First-order kinematic step in the body frame.

    Axis convention (documented test): at yaw 0, +v_forward moves along world
    +x and +v_lateral along world +y (rightward); at yaw pi/2, +v_lateral
    maps to world -x.  +v_vertical is world +z.
    """
    vf, vl, vv = cmd.v_forward, cmd.v_lateral, cmd.v_vertical
    if nav_cfg is not None:
        vf = min(max(vf, 0.0), nav_cfg.forward_speed)
        vl = max(-nav_cfg.max_lateral, min(nav_cfg.max_lateral, vl))
        vv = max(-nav_cfg.max_vertical, min(nav_cfg.max_vertical, vv))
    c, s = math.cos(robot.yaw), math.sin(robot.yaw)
    world_v = (c * vf - s * vl, s * vf + c * vl, vv)
    pos = tuple(p + v * dt for p, v in zip(robot.position, world_v))
    return replace(robot, position=pos, velocity=world_v)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class SimConfig:
    cfg: OpticalConfig
    mask: ApertureMask
    pattern: DotPattern
    planes: tuple[float, ...]
    dt: float = 0.05  # 20 Hz perception/control
    max_steps: int = 400
    altitude: float = 1.5
    start_margin: float = 0.6
    goal_margin: float = 0.6
    projector_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    estimator_latency_frames: int = 0
    ambient: float = 0.002
    collision_substeps: int = 4

    def __post_init__(self):
        if self.dt <= 0 or self.max_steps < 1:
            raise ValueError("dt must be > 0 and max_steps >= 1")
        if self.estimator_latency_frames < 0:
            raise ValueError("estimator_latency_frames must be >= 0")


def run_trial(
    scene: WorldScene, estimator, nav_cfg: NavConfig, sim_cfg: SimConfig
) -> TrialResult:
    """sense -> estimate -> segment -> command -> step until the goal plane,
    a collision, a bounds exit, or timeout.

    ``estimator`` maps a GrayImage to a DepthEstimate.  The control loop
    consumes the latest *completed* estimate: with nonzero simulated latency
    the command falls back to straight flight until the first estimate lands.
    """
    renderer = SensorRenderer(
        sim_cfg.cfg,
        sim_cfg.mask,
        sim_cfg.pattern,
        sim_cfg.planes,
        sim_cfg.projector_offset,
        sim_cfg.ambient,
    )
    lo, hi = np.asarray(scene.bounds_min), np.asarray(scene.bounds_max)
    start = (
        float(lo[0] + sim_cfg.start_margin),
        float((lo[1] + hi[1]) / 2.0),
        sim_cfg.altitude,
    )
    goal_x = float(hi[0] - sim_cfg.goal_margin)
    robot = RobotState(position=start, yaw=0.0)
    path: list[tuple[float, RobotState]] = [(0.0, robot)]
    min_clear = clearance(scene, robot.position) - robot.body_radius
    pending: list[DepthEstimate] = []
    cmd = NavCommand(nav_cfg.forward_speed, 0.0, 0.0)
    failure = "timeout"
    for k in range(sim_cfg.max_steps):
        image = renderer(scene, robot)
        pending.append(estimator(image))
        if len(pending) > sim_cfg.estimator_latency_frames:
            est = pending.pop(0)
            fg = segment_fg_bg(est, nav_cfg.dodge_distance, nav_cfg.logvar_cap)
            cmd = potential_field_cmd(fg, nav_cfg)
        prev = np.asarray(robot.position)
        robot = step(robot, cmd, sim_cfg.dt, nav_cfg)
        t_now = (k + 1) * sim_cfg.dt
        path.append((t_now, robot))
        # conservative collision check along the motion segment
        cur = np.asarray(robot.position)
        collided = False
        for j in range(1, sim_cfg.collision_substeps + 1):
            q = prev + (cur - prev) * (j / sim_cfg.collision_substeps)
            c = clearance(scene, q) - robot.body_radius
            min_clear = min(min_clear, c)
            if c < 0:
                collided = True
        if collided:
            failure = "collision"
            break
        p = robot.position
        if not (lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1] and lo[2] <= p[2] <= hi[2]):
            failure = "out_of_bounds"
            break
        if p[0] >= goal_x:
            failure = "none"
            break
    return TrialResult(
        success=failure == "none",
        failure_kind=failure,
        path=tuple(path),
        min_clearance=min_clear,
    )


@dataclass(frozen=True)
class BatchResult:
    success_rate: float
    per_trial: tuple[TrialResult, ...]


def run_batch(scenes, estimator, nav_cfg: NavConfig, sim_cfg: SimConfig) -> BatchResult:
    scenes = list(scenes)
    if not scenes:
        raise ValueError("run_batch needs at least one scene")
    results = tuple(run_trial(s, estimator, nav_cfg, sim_cfg) for s in scenes)
    rate = sum(r.success for r in results) / len(results)
    return BatchResult(success_rate=rate, per_trial=results)


# ---------------------------------------------------------------------------
# scene sampling and scoring


def sample_forest(
    seed: int,
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]],
    density: float,
    obstacle_mix: str = "forest",
) -> WorldScene:
    """Poisson-disk-style obstacle placement at the given density (per m^2).

    Keeps a clear disk around the start point and a clear strip before the
    goal plane.  The 'dark' mix lowers reflectivity and guarantees at least
    one thin horizontal capsule (rope).
    """
    if obstacle_mix not in ("forest", "dark"):
        raise ValueError(f"unknown obstacle mix {obstacle_mix!r}")
    lo, hi = bounds
    rng = np.random.default_rng((seed, 0xF0))
    area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    target = int(round(density * area))
    start = np.array([lo[0] + 0.6, (lo[1] + hi[1]) / 2.0])
    min_sep = 0.8
    placed: list[np.ndarray] = []
    obstacles: list[Obstacle] = []
    attempts = 0
    dark = obstacle_mix == "dark"
    while len(placed) < target and attempts < target * 200 + 200:
        attempts += 1
        x = rng.uniform(lo[0] + 1.5, hi[0] - 1.5)
        y = rng.uniform(lo[1] + 0.3, hi[1] - 0.3)
        p = np.array([x, y])
        if np.linalg.norm(p - start) < 1.5:
            continue
        if placed and min(np.linalg.norm(p - q) for q in placed) < min_sep:
            continue
        placed.append(p)
        refl = rng.uniform(0.03, 0.1) if dark else rng.uniform(0.3, 0.9)
        if rng.uniform() < 0.7:
            obstacles.append(
                Cylinder(
                    cx=x,
                    cy=y,
                    radius=float(rng.uniform(0.08, 0.25)),
                    height=float(rng.uniform(2.5, min(3.4, hi[2] - 0.05))),
                    reflectivity=float(refl),
                )
            )
        else:
            obstacles.append(
                Box(
                    center=(x, y, 0.6),
                    size=(
                        float(rng.uniform(0.3, 0.8)),
                        float(rng.uniform(0.3, 0.8)),
                        1.2,
                    ),
                    reflectivity=float(refl),
                )
            )
    if dark and target > 0:
        x = float(rng.uniform(lo[0] + 2.0, hi[0] - 2.0))
        z = float(rng.uniform(1.0, 2.0))
        obstacles.append(
            Capsule(
                p0=(x, lo[1] + 0.2, z),
                p1=(x, hi[1] - 0.2, z),
                radius=0.003175,  # 6.35 mm rope
                reflectivity=0.05,
            )
        )
    return WorldScene(bounds_min=lo, bounds_max=hi, obstacles=tuple(obstacles))


ROBOT_DIAMETER_M = 0.3

_TRAVERSABILITY_TRANSECTS = 1000
_TRAVERSABILITY_SEED = 0x7241


def traversability(scene: WorldScene) -> float:
    """Mean free straight-line path length (in robot diameters) over a fixed
    seeded set of transects; adding obstacles can only lower the score."""
    lo = np.asarray(scene.bounds_min)
    hi = np.asarray(scene.bounds_max)
    rng = np.random.default_rng(_TRAVERSABILITY_SEED)
    z = (lo[2] + hi[2]) / 2.0
    diag = float(np.linalg.norm((hi - lo)[:2]))
    total = 0.0
    origins = np.stack(
        [
            rng.uniform(lo[0], hi[0], _TRAVERSABILITY_TRANSECTS),
            rng.uniform(lo[1], hi[1], _TRAVERSABILITY_TRANSECTS),
            np.full(_TRAVERSABILITY_TRANSECTS, z),
        ],
        axis=1,
    )
    thetas = rng.uniform(0.0, 2.0 * math.pi, _TRAVERSABILITY_TRANSECTS)
    dirs = np.stack([np.cos(thetas), np.sin(thetas), np.zeros_like(thetas)], axis=1)
    for origin, d in zip(origins, dirs):
        t, _ = _cast(origin, d[None, :], scene)
        free = min(float(t[0]), diag)
        total += free
    return total / _TRAVERSABILITY_TRANSECTS / ROBOT_DIAMETER_M


# ---------------------------------------------------------------------------
# scene files and logs


def scene_to_text(scene: WorldScene) -> str:
    lines = [
        "bounds "
        + " ".join(repr(float(v)) for v in (*scene.bounds_min, *scene.bounds_max))
    ]
    for ob in scene.obstacles:
        if isinstance(ob, Box):
            lines.append(
                "box "
                + " ".join(repr(float(v)) for v in (*ob.center, *ob.size))
                + f" {ob.reflectivity!r}"
            )
        elif isinstance(ob, Cylinder):
            lines.append(
                f"cyl {ob.cx!r} {ob.cy!r} {ob.radius!r} {ob.height!r} "
                f"{ob.reflectivity!r}"
            )
        else:
            lines.append(
                "cap "
                + " ".join(repr(float(v)) for v in (*ob.p0, *ob.p1))
                + f" {ob.radius!r} {ob.reflectivity!r}"
            )
    return "\n".join(lines) + "\n"


def parse_scene_text(text: str) -> WorldScene:
    bounds_min = bounds_max = None
    obstacles: list[Obstacle] = []
    for line in text.splitlines():
        toks = line.split()
        if not toks:
            continue
        kind, vals = toks[0], [float(t) for t in toks[1:]]
        if kind == "bounds":
            bounds_min, bounds_max = tuple(vals[:3]), tuple(vals[3:6])
        elif kind == "box":
            obstacles.append(Box(tuple(vals[0:3]), tuple(vals[3:6]), vals[6]))
        elif kind == "cyl":
            obstacles.append(Cylinder(vals[0], vals[1], vals[2], vals[3], vals[4]))
        elif kind == "cap":
            obstacles.append(
                Capsule(tuple(vals[0:3]), tuple(vals[3:6]), vals[6], vals[7])
            )
        else:
            raise ValueError(f"unknown scene line kind {kind!r}")
    if bounds_min is None:
        raise ValueError("scene file missing bounds line")
    return WorldScene(bounds_min, bounds_max, tuple(obstacles))


def write_trial_log(result: TrialResult, path) -> None:
    lines = ["t,x,y,z,yaw,vx,vy,vz"]
    for t, state in result.path:
        p, v = state.position, state.velocity
        lines.append(
            f"{t!r},{p[0]!r},{p[1]!r},{p[2]!r},{state.yaw!r},"
            f"{v[0]!r},{v[1]!r},{v[2]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_batch_summary(results, seeds, path) -> None:
    lines = ["seed,success,failure_kind,min_clearance,steps"]
    for seed, r in zip(seeds, results):
        lines.append(
            f"{seed},{int(r.success)},{r.failure_kind},"
            f"{r.min_clearance!r},{len(r.path) - 1}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
