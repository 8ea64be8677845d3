"""Procedural road scenes with a matching camera image, LiDAR sweep and labels.

The world frame has its origin on the ground below the LiDAR, x forward,
y left, z up.  The road is a band of (optionally curved) flat asphalt at
z = 0; everything beside it is rough terrain raised by a curb.  Upright boxes
stand in for cars, poles and buildings.  Both sensors are ray-cast against the
same geometry, so the ground truth, the image and the point cloud agree.

Lighting corruption (global brightness, cast shadows, over-exposed patches)
only touches the image; the point cloud of a seed is the same at every
corruption level.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DegenerateGeometry, InputError, ValidationError
from .evalkit import CATEGORIES, NON_ROAD, ROAD, load_gt_png, save_gt_png
from .lidar_io import (
    CalibrationSet,
    PointCloud,
    format_calibration,
    load_calibration,
    load_point_cloud,
    write_point_cloud,
)

# surface ids of the first hit along a ray
SKY, ROAD_SURFACE, TERRAIN, CURB = 0, 1, 2, 3
FIRST_BOX = 4


@dataclass(frozen=True)
class CameraConfig:
    width: int = 320
    height: int = 96
    focal: Optional[float] = None
    cx: Optional[float] = None
    cy: Optional[float] = None
    mount_height: float = 1.65

    @property
    def f(self) -> float:
        return self.focal if self.focal is not None else 0.58 * self.width

    @property
    def principal(self) -> tuple[float, float]:
        cx = self.cx if self.cx is not None else self.width / 2.0
        cy = self.cy if self.cy is not None else 0.45 * self.height
        return cx, cy


@dataclass(frozen=True)
class LidarConfig:
    mount_height: float = 1.73
    azimuth_range: tuple = (-45.0, 45.0)
    azimuth_step: float = 0.2
    elevation_top: float = 2.0
    elevation_bottom: float = -24.8
    rings: int = 64
    max_range: float = 80.0
    altitude_noise: float = 0.01


@dataclass(frozen=True)
class Prism:
    """Axis-aligned upright box standing on z = 0."""

    x: float
    y: float
    length: float
    width: float
    height: float
    color: tuple = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class Shadow:
    """Rotated ground rectangle darkening whatever ground it covers."""

    x: float
    y: float
    length: float
    width: float
    angle: float
    strength: float


@dataclass(frozen=True)
class Flare:
    """Image-space ellipse of over-exposure (colour gain then clamp)."""

    u: float
    v: float
    ru: float
    rv: float
    gain: float


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    category: str = "UM"
    lane_width: float = 3.5
    lanes: int = 2
    curvature: float = 0.0
    heading: float = 0.0
    road_offset: float = 0.0
    road_length: float = 100.0
    grade: float = 0.0  # ground rises by ``grade`` metres per metre forward
    curb_height: float = 0.12
    curb_color: tuple = (0.62, 0.62, 0.62)
    roughness: float = 0.08
    road_gray: float = 0.32
    terrain_color: tuple = (0.36, 0.45, 0.25)
    terrain_texture: float = 0.12
    obstacles: tuple = ()
    brightness: float = 1.0
    shadows: tuple = ()
    flares: tuple = ()
    corruption_level: float = 0.0
    camera: CameraConfig = field(default_factory=CameraConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValidationError(f"category must be one of {CATEGORIES}")
        for ob in self.obstacles:
            if ob.height <= 0.3:
                raise ValidationError("obstacle heights must exceed 0.3 m")

    @property
    def road_width(self) -> float:
        return self.lane_width * self.lanes


@dataclass
class SceneBundle:
    image: np.ndarray  # (H, W, 3) uint8
    cloud: PointCloud
    calib: CalibrationSet
    gt: np.ndarray  # (H, W) uint8 labels
    category: str
    seed: int = 0
    corruption_level: float = 0.0
    surface: Optional[np.ndarray] = None  # (H, W) surface ids, in-memory only

    @property
    def height(self) -> int:
        return self.gt.shape[0]

    @property
    def width(self) -> int:
        return self.gt.shape[1]


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

# velodyne (x fwd, y left, z up) -> camera (x right, y down, z fwd)
_VELO_TO_CAM_ROT = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def calibration_for(camera: CameraConfig) -> CalibrationSet:
    cx, cy = camera.principal
    proj = np.array([[camera.f, 0.0, cx, 0.0], [0.0, camera.f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    t = -_VELO_TO_CAM_ROT @ np.array([0.0, 0.0, camera.mount_height])
    extrinsic = np.column_stack([_VELO_TO_CAM_ROT, t])
    return CalibrationSet(proj=proj, rect=np.eye(3), extrinsic=extrinsic)


def road_centre(spec: SceneSpec, x: np.ndarray) -> np.ndarray:
    return spec.road_offset + math.tan(spec.heading) * x + 0.5 * spec.curvature * x * x


def on_road(spec: SceneSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x >= 0) & (x <= spec.road_length) & (np.abs(y - road_centre(spec, x)) <= spec.road_width / 2)


def ground_z(spec: SceneSpec, x: np.ndarray) -> np.ndarray:
    """Road-surface altitude below ``x``."""
    return spec.grade * x


def _box_base(spec: SceneSpec, b: Prism) -> float:
    # sunk to the lowest ground point of its footprint so it never floats
    return spec.grade * b.x - abs(spec.grade) * b.length / 2


def _terrain_noise(seed: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Smooth pseudo-random bumps in [-1, 1] with ~0.3-1 m wavelengths."""
    rng = np.random.default_rng([seed, 99])
    out = np.zeros_like(x)
    waves = 6
    for _ in range(waves):
        ang = rng.uniform(0, math.pi)
        k = 2 * math.pi / rng.uniform(0.3, 1.0)
        ph = rng.uniform(0, 2 * math.pi)
        out += np.sin(k * (x * math.cos(ang) + y * math.sin(ang)) + ph)
    return out / math.sqrt(waves / 2.0) / 2.0


def _ground_hit(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """First hit of rays with the road plane / raised rough terrain.

    Returns ray parameter, surface id and altitude for every ray (inf / SKY
    where the ray never descends to the ground).
    """
    n = dirs.shape[0]
    t = np.full(n, np.inf)
    surface = np.full(n, SKY, dtype=np.int64)
    alt = np.zeros(n)
    g = spec.grade
    # rate at which a ray approaches the sloped planes z = g*x + c
    rate = dirs[:, 2] - g * dirs[:, 0]
    down = rate < -1e-9
    # (t_curb and t_road are only meaningful where ``down`` holds)
    gap = g * origin[0] - origin[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_curb = np.where(down, (spec.curb_height + gap) / rate, np.inf)
        t_road = np.where(down, gap / rate, np.inf)
    t_curb = np.where(np.isfinite(t_curb) & (t_curb > 0), t_curb, np.inf)
    t_road = np.where(np.isfinite(t_road) & (t_road > 0), t_road, np.inf)
    # rays that never reach the ground are evaluated at the origin, then masked
    c1 = np.where(np.isfinite(t_curb), t_curb, 0.0)
    c0 = np.where(np.isfinite(t_road), t_road, 0.0)
    x1 = origin[0] + c1 * dirs[:, 0]
    y1 = origin[1] + c1 * dirs[:, 1]
    x0 = origin[0] + c0 * dirs[:, 0]
    y0 = origin[1] + c0 * dirs[:, 1]
    road1 = on_road(spec, x1, y1)
    road0 = on_road(spec, x0, y0)
    terr = down & ~road1
    t[terr] = t_curb[terr]
    surface[terr] = TERRAIN
    rough = spec.roughness * _terrain_noise(spec.seed, x1, y1)
    alt[terr] = (ground_z(spec, x1) + spec.curb_height + rough)[terr]
    rd = down & road1 & road0
    t[rd] = t_road[rd]
    surface[rd] = ROAD_SURFACE
    alt[rd] = ground_z(spec, x0)[rd]
    # over the road at curb height, off the road at ground height: curb face
    cf = down & road1 & ~road0
    t[cf] = 0.5 * (t_curb[cf] + t_road[cf])
    surface[cf] = CURB
    alt[cf] = (ground_z(spec, 0.5 * (x0 + x1)) + 0.5 * spec.curb_height)[cf]
    return t, surface, alt


def _box_hits(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """Nearest box intersection per ray: (t, box index or -1, hit normal axis)."""
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    which = np.full(n, -1, dtype=np.int64)
    axis = np.zeros(n, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    for i, b in enumerate(spec.obstacles):
        base = _box_base(spec, b)
        lo = np.array([b.x - b.length / 2, b.y - b.width / 2, base])
        hi = np.array([b.x + b.length / 2, b.y + b.width / 2, base + b.height])
        with np.errstate(invalid="ignore"):
            ta = (lo - origin) * inv
            tb = (hi - origin) * inv
        tmin = np.minimum(ta, tb)
        tmax = np.maximum(ta, tb)
        # parallel rays inside a slab give NaN; treat as unbounded
        tmin = np.where(np.isnan(tmin), -np.inf, tmin)
        tmax = np.where(np.isnan(tmax), np.inf, tmax)
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        hit = (t_enter <= t_exit) & (t_enter > 1e-9) & (t_enter < best)
        best[hit] = t_enter[hit]
        which[hit] = i
        axis[hit] = tmin.argmax(axis=1)[hit]
    return best, which, axis


def _inside_box(spec: SceneSpec, p: np.ndarray) -> bool:
    for b in spec.obstacles:
        if (abs(p[0] - b.x) <= b.length / 2 and abs(p[1] - b.y) <= b.width / 2 and 0 <= p[2] - _box_base(spec, b) <= b.height):
            return True
    return False


def cast(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """First hit of each ray: ``(t, surface id, altitude, box normal axis)``."""
    t_g, surf, alt = _ground_hit(spec, origin, dirs)
    t_b, which, axis = _box_hits(spec, origin, dirs)
    box_first = t_b < t_g
    t = np.where(box_first, t_b, t_g)
    surf = np.where(box_first, FIRST_BOX + which, surf)
    hit_z = origin[2] + t * dirs[:, 2]
    alt = np.where(box_first, hit_z, alt)
    return t, surf, alt, axis


# ---------------------------------------------------------------------------
# Sensors
# ---------------------------------------------------------------------------


def lidar_rays(cfg: LidarConfig) -> np.ndarray:
    az = np.deg2rad(np.arange(cfg.azimuth_range[0], cfg.azimuth_range[1] + 1e-9, cfg.azimuth_step))
    el = np.deg2rad(np.linspace(cfg.elevation_top, cfg.elevation_bottom, cfg.rings))
    ee, aa = np.meshgrid(el, az, indexing="ij")
    return np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1).reshape(-1, 3)


def simulate_lidar(spec: SceneSpec, rng: np.random.Generator) -> PointCloud:
    cfg = spec.lidar
    origin = np.array([0.0, 0.0, cfg.mount_height])
    dirs = lidar_rays(cfg)
    t, surf, alt, _ = cast(spec, origin, dirs)
    keep = np.isfinite(t) & (t <= cfg.max_range) & (surf != SKY)
    pts = origin + t[keep, None] * dirs[keep]
    z = alt[keep] + rng.uniform(-cfg.altitude_noise, cfg.altitude_noise, size=keep.sum())
    s = surf[keep]
    refl = np.select([s == ROAD_SURFACE, s == TERRAIN, s == CURB], [0.15, 0.35, 0.5], 0.6)
    refl = np.clip(refl + rng.normal(0.0, 0.03, size=refl.shape), 0.0, 1.0)
    cloud = np.column_stack([pts[:, 0], pts[:, 1], z, refl])
    # round through float32 so the on-disk encoding is lossless
    return PointCloud(cloud.astype(np.float32).astype(np.float64))


def camera_rays(camera: CameraConfig) -> np.ndarray:
    """Unit-free ray directions (world frame) through every pixel centre."""
    cx, cy = camera.principal
    v, u = np.mgrid[0 : camera.height, 0 : camera.width]
    d_cam = np.stack([(u + 0.5 - cx) / camera.f, (v + 0.5 - cy) / camera.f, np.ones(u.shape)], axis=-1)
    return d_cam.reshape(-1, 3) @ _VELO_TO_CAM_ROT  # R^T applied row-wise


def _point_in_shadow(sh: Shadow, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    c, s = math.cos(sh.angle), math.sin(sh.angle)
    dx, dy = x - sh.x, y - sh.y
    a = dx * c + dy * s
    b = -dx * s + dy * c
    return (np.abs(a) <= sh.length / 2) & (np.abs(b) <= sh.width / 2)


def render_camera(spec: SceneSpec, rng: np.random.Generator):
    """Flat-shaded RGB image, ground-truth labels and surface ids."""
    cam = spec.camera
    origin = np.array([0.0, 0.0, cam.mount_height])
    dirs = camera_rays(cam)
    t, surf, _, axis = cast(spec, origin, dirs)
    hit = origin + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
    x, y = hit[:, 0], hit[:, 1]
    n = dirs.shape[0]
    rgb = np.zeros((n, 3))

    # sky gradient
    sky = surf == SKY
    elev = np.clip(dirs[:, 2] / np.linalg.norm(dirs, axis=1), 0, 1)
    rgb[sky] = np.array([0.62, 0.74, 0.92]) + elev[sky, None] * np.array([-0.2, -0.15, 0.0])

    tex = rng.normal(0.0, 1.0, size=n)
    road = surf == ROAD_SURFACE
    rgb[road] = spec.road_gray * (1.0 + 0.06 * tex[road, None])
    if spec.category in ("UM", "UMM"):
        rgb[road & _markings(spec, x, y)] = 0.9

    terr = surf == TERRAIN
    rough = _terrain_noise(spec.seed, x, y)
    rgb[terr] = np.asarray(spec.terrain_color) * (1.0 + spec.terrain_texture * rough[terr, None]
                                                 + 0.06 * tex[terr, None])
    rgb[surf == CURB] = np.asarray(spec.curb_color)

    for i, b in enumerate(spec.obstacles):
        m = surf == FIRST_BOX + i
        shade = np.where(axis[m] == 2, 1.15, np.where(axis[m] == 0, 0.85, 0.7))
        rgb[m] = np.asarray(b.color) * shade[:, None] * (1.0 + 0.03 * tex[m, None])

    # lighting corruption: image only
    ground = (surf == ROAD_SURFACE) | (surf == TERRAIN) | (surf == CURB)
    for sh in spec.shadows:
        m = ground & _point_in_shadow(sh, x, y)
        rgb[m] *= sh.strength
    rgb *= spec.brightness
    uu = np.tile(np.arange(cam.width) + 0.5, cam.height)
    vv = np.repeat(np.arange(cam.height) + 0.5, cam.width)
    for fl in spec.flares:
        r2 = ((uu - fl.u) / fl.ru) ** 2 + ((vv - fl.v) / fl.rv) ** 2
        w = np.clip(1.5 - r2, 0.0, 1.0)[:, None]
        rgb = rgb * (1.0 + (fl.gain - 1.0) * w) + 0.5 * w
    rgb += rng.normal(0.0, 0.015, size=rgb.shape)
    image = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).reshape(cam.height, cam.width, 3)
    gt = np.where(road, ROAD, NON_ROAD).astype(np.uint8).reshape(cam.height, cam.width)
    return image, gt, surf.reshape(cam.height, cam.width)


def _markings(spec: SceneSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    off = y - road_centre(spec, x)
    half = spec.road_width / 2
    lw = 0.15
    edge = np.abs(np.abs(off) - (half - 0.3)) <= lw / 2
    dashed = (np.mod(x, 6.0) < 3.0)
    if spec.category == "UM":
        lines = [0.0]
    else:
        lines = [-half + spec.road_width * k / 3 for k in (1, 2)]
    centre = np.zeros_like(edge)
    for c in lines:
        centre |= np.abs(off - c) <= lw / 2
    return edge | (centre & dashed)


def generate(spec: SceneSpec) -> SceneBundle:
    """Render one scene.  Deterministic in ``spec``."""
    for origin in ((0.0, 0.0, spec.camera.mount_height), (0.0, 0.0, spec.lidar.mount_height)):
        if _inside_box(spec, np.array(origin)):
            raise DegenerateGeometry("a sensor is inside an obstacle")
    cloud = simulate_lidar(spec, np.random.default_rng([spec.seed, 1]))
    image, gt, surface = render_camera(spec, np.random.default_rng([spec.seed, 2]))
    return SceneBundle(image, cloud, calibration_for(spec.camera), gt, spec.category,
                       spec.seed, spec.corruption_level, surface)


# ---------------------------------------------------------------------------
# Random scenes and datasets
# ---------------------------------------------------------------------------


_BOX_COLORS = [(0.55, 0.1, 0.1), (0.15, 0.2, 0.5), (0.3, 0.3, 0.32), (0.8, 0.8, 0.78),
               (0.45, 0.35, 0.25), (0.6, 0.55, 0.45), (0.25, 0.25, 0.25)]
_TERRAIN_COLORS = [(0.36, 0.45, 0.25), (0.5, 0.48, 0.44), (0.48, 0.4, 0.3), (0.3, 0.38, 0.22)]


def random_spec(
    seed: int,
    category: str = "UM",
    corruption_level: float = 0.0,
    camera: CameraConfig = CameraConfig(),
    lidar: LidarConfig = LidarConfig(),
) -> SceneSpec:
    """Sample a scene.  Geometry depends on ``seed`` only; lighting also on ``corruption_level``."""
    g = np.random.default_rng([seed, 10])
    lanes = 2 if category != "UMM" else 3
    lane_width = float(g.uniform(2.8, 3.6)) if category != "UMM" else float(g.uniform(2.4, 2.9))
    road_width = lane_width * lanes
    curvature = float(g.uniform(-0.012, 0.012))
    heading = float(np.deg2rad(g.uniform(-12.0, 12.0)))
    offset = float(g.uniform(-0.5, 0.5) * road_width)
    road_gray = float(g.uniform(0.26, 0.38))
    if g.random() < 0.5:
        # gravel or pavement beside the road: nearly the road's colour, so
        # only the geometry tells them apart
        tone = road_gray + float(g.uniform(-0.04, 0.06))
        terrain_color, terrain_texture = (tone, tone, 1.02 * tone), 0.03
        curb_color = (tone, tone, tone)
    else:
        terrain_color = _TERRAIN_COLORS[int(g.integers(len(_TERRAIN_COLORS)))]
        terrain_texture = 0.12
        curb_color = (0.62, 0.62, 0.62)
    spec = SceneSpec(
        seed=seed,
        category=category,
        lane_width=lane_width,
        lanes=lanes,
        curvature=curvature,
        heading=heading,
        road_offset=offset,
        road_length=float(g.uniform(60.0, 100.0)),
        curb_height=float(g.uniform(0.08, 0.18)),
        curb_color=curb_color,
        roughness=float(g.uniform(0.05, 0.12)),
        road_gray=road_gray,
        terrain_color=terrain_color,
        terrain_texture=terrain_texture,
        camera=camera,
        lidar=lidar,
    )
    obstacles = []
    # parked cars along the road edges
    for _ in range(int(g.integers(1, 5))):
        x = float(g.uniform(8.0, 40.0))
        side = 1 if g.random() < 0.5 else -1
        y = float(road_centre(spec, np.array(x))) + side * (road_width / 2 + g.uniform(0.9, 2.0))
        obstacles.append(Prism(x, y, float(g.uniform(3.8, 4.6)), float(g.uniform(1.6, 1.9)),
                               float(g.uniform(1.3, 1.7)), _BOX_COLORS[int(g.integers(len(_BOX_COLORS)))]))
    # a vehicle ahead on the road, sometimes
    if g.random() < 0.4:
        x = float(g.uniform(15.0, 45.0))
        y = float(road_centre(spec, np.array(x))) + float(g.uniform(-0.2, 0.2)) * road_width
        obstacles.append(Prism(x, y, 4.2, 1.8, float(g.uniform(1.4, 1.8)),
                               _BOX_COLORS[int(g.integers(len(_BOX_COLORS)))]))
    # buildings and poles further out
    for _ in range(int(g.integers(2, 6))):
        x = float(g.uniform(10.0, 70.0))
        side = 1 if g.random() < 0.5 else -1
        y = float(road_centre(spec, np.array(x))) + side * (road_width / 2 + g.uniform(5.0, 12.0))
        obstacles.append(Prism(x, y, float(g.uniform(6.0, 20.0)), float(g.uniform(4.0, 10.0)),
                               float(g.uniform(4.0, 12.0)), _BOX_COLORS[int(g.integers(len(_BOX_COLORS)))]))
    for _ in range(int(g.integers(0, 4))):
        x = float(g.uniform(6.0, 40.0))
        side = 1 if g.random() < 0.5 else -1
        y = float(road_centre(spec, np.array(x))) + side * (road_width / 2 + g.uniform(0.6, 3.0))
        obstacles.append(Prism(x, y, 0.3, 0.3, float(g.uniform(2.5, 5.0)), (0.4, 0.4, 0.4)))
    spec = replace(spec, obstacles=tuple(obstacles))
    return replace(spec, corruption_level=corruption_level, **_random_lighting(seed, corruption_level, spec))


def _random_lighting(seed: int, level: float, spec: SceneSpec) -> dict:
    if level <= 0:
        return {"brightness": 1.0, "shadows": (), "flares": ()}
    g = np.random.default_rng([seed, 20])
    cam = spec.camera
    brightness = float(g.uniform(1.0 - 0.5 * level, 1.0 + 0.3 * level))
    shadows = []
    for _ in range(int(g.integers(1, 2 + round(5 * level)))):
        x = float(g.uniform(6.0, 35.0))
        shadows.append(Shadow(
            x=x,
            y=float(road_centre(spec, np.array(x))) + float(g.uniform(-1.0, 1.0)) * (spec.road_width / 2 + 4.0),
            length=float(g.uniform(2.0, 10.0)),
            width=float(g.uniform(1.5, 6.0)),
            angle=float(g.uniform(0, math.pi)),
            strength=float(g.uniform(0.25, 0.55)),
        ))
    flares = []
    for _ in range(int(g.integers(0, 1 + round(2 * level)))):
        flares.append(Flare(
            u=float(g.uniform(0, cam.width)),
            v=float(g.uniform(0.4 * cam.height, cam.height)),
            ru=float(g.uniform(0.08, 0.25) * cam.width),
            rv=float(g.uniform(0.1, 0.3) * cam.height),
            gain=float(g.uniform(2.0, 4.0) * level + 1.0),
        ))
    return {"brightness": brightness, "shadows": tuple(shadows), "flares": tuple(flares)}


def scene_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)]


def generate_dataset(
    count: int,
    seed: int,
    corruption_level: float = 0.0,
    camera: CameraConfig = CameraConfig(),
    lidar: LidarConfig = LidarConfig(),
) -> tuple[list[SceneBundle], dict]:
    """``count`` scenes cycling through UM, UMM, UU, plus a manifest."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    bundles = []
    entries = []
    for i, s in enumerate(scene_seeds(seed, count)):
        cat = CATEGORIES[i % len(CATEGORIES)]
        bundles.append(generate(random_spec(s, cat, corruption_level, camera, lidar)))
        entries.append({"name": f"{i:06d}", "category": cat, "seed": s})
    manifest = {
        "count": count,
        "seed": seed,
        "corruption_level": corruption_level,
        "width": camera.width,
        "height": camera.height,
        "scenes": entries,
    }
    return bundles, manifest


# ---------------------------------------------------------------------------
# Disk layout
# ---------------------------------------------------------------------------


def save_scene(bundle: SceneBundle, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(bundle.image, "RGB").save(d / "image.png")
    (d / "cloud.bin").write_bytes(write_point_cloud(bundle.cloud))
    (d / "calib.txt").write_text(format_calibration(bundle.calib), encoding="ascii")
    save_gt_png(d / "gt.png", bundle.gt)
    meta = {"category": bundle.category, "seed": bundle.seed, "corruption_level": bundle.corruption_level}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_scene(directory) -> SceneBundle:
    d = Path(directory)
    try:
        image = np.asarray(Image.open(d / "image.png").convert("RGB"), dtype=np.uint8)
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read scene {d}: {exc}") from exc
    try:
        cloud = load_point_cloud(d / "cloud.bin")
        calib = load_calibration(d / "calib.txt")
    except OSError as exc:
        raise InputError(f"cannot read scene {d}: {exc}") from exc
    gt = load_gt_png(d / "gt.png")
    return SceneBundle(image, cloud, calib, gt, meta["category"], int(meta.get("seed", 0)),
                       float(meta.get("corruption_level", 0.0)))


def save_dataset(bundles: list[SceneBundle], manifest: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for entry, bundle in zip(manifest["scenes"], bundles):
        save_scene(bundle, out / entry["name"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def scene_dirs(root) -> list[Path]:
    """Scene directories of a dataset, in manifest order when a manifest exists."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    manifest = root / "manifest.json"
    if manifest.exists():
        names = [e["name"] for e in json.loads(manifest.read_text(encoding="utf-8"))["scenes"]]
        return [root / n for n in names]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists())


def load_dataset(root) -> list[SceneBundle]:
    return [load_scene(d) for d in scene_dirs(root)]
