"""LiDAR point clouds, KITTI calibration text, and camera projection.

Point clouds use the KITTI Velodyne container: consecutive little-endian
``float32`` quadruples ``(x, y, z, reflectance)`` with no header.  The
sensor frame is x forward, y left, z up; ``z`` is treated as altitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidCalibration,
    MissingKey,
    NonFiniteValue,
    TruncatedRecord,
    WrongArity,
)

RECORD_BYTES = 16
_LE_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class PointCloud:
    """An ``(N, 4)`` array of ``x, y, z, reflectance`` rows (float64)."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(pts)):
            raise NonFiniteValue("point cloud contains NaN or Inf")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def altitude(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass(frozen=True)
class CalibrationSet:
    proj: np.ndarray
    rect: np.ndarray
    extrinsic: np.ndarray

    def __post_init__(self) -> None:
        proj = np.asarray(self.proj, dtype=np.float64).reshape(3, 4)
        rect = np.asarray(self.rect, dtype=np.float64).reshape(3, 3)
        extrinsic = np.asarray(self.extrinsic, dtype=np.float64).reshape(3, 4)
        if abs(np.linalg.det(rect)) <= 1e-9:
            raise InvalidCalibration("rectification matrix is singular")
        if proj[0, 0] == 0.0 or proj[1, 1] == 0.0:
            raise InvalidCalibration("projection matrix has a zero focal entry")
        for m in (proj, rect, extrinsic):
            m.setflags(write=False)
        object.__setattr__(self, "proj", proj)
        object.__setattr__(self, "rect", rect)
        object.__setattr__(self, "extrinsic", extrinsic)

    def sensor_to_image(self) -> np.ndarray:
        """Composite 3x4 matrix taking homogeneous sensor points to ``[su, sv, s]``."""
        ext = np.vstack([self.extrinsic, [0.0, 0.0, 0.0, 1.0]])
        rect = np.eye(4)
        rect[:3, :3] = self.rect
        return self.proj @ rect @ ext


@dataclass(frozen=True)
class ProjectedPoints:
    """Columnar projection result; row ``i`` is one projected point.

    ``source_index`` refers back into the originating :class:`PointCloud`.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    altitude: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return self.u.shape[0]


def read_point_cloud(blob: bytes) -> PointCloud:
    if len(blob) % RECORD_BYTES:
        raise TruncatedRecord(
            f"point cloud length {len(blob)} is not a multiple of {RECORD_BYTES} bytes"
        )
    raw = np.frombuffer(blob, dtype=_LE_F32).reshape(-1, 4)
    if not np.all(np.isfinite(raw)):
        raise NonFiniteValue("point cloud contains NaN or Inf")
    return PointCloud(raw.astype(np.float64))


def write_point_cloud(cloud: PointCloud) -> bytes:
    """Encode to the float32 container.  Values are rounded to float32."""
    return np.ascontiguousarray(cloud.points, dtype=_LE_F32).tobytes()


def load_point_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        return read_point_cloud(fh.read())


_CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def read_calibration(text: str) -> CalibrationSet:
    """Parse KITTI ``KEY: v1 v2 ...`` calibration text.

    Only ``P2``, ``R0_rect`` and ``Tr_velo_to_cam`` are used; other keys are
    ignored.  Values are row-major.
    """
    found: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in _CALIB_KEYS:
            continue
        values = [float(tok) for tok in rest.split()]
        shape = _CALIB_KEYS[key]
        if len(values) != shape[0] * shape[1]:
            raise WrongArity(
                f"{key} expects {shape[0] * shape[1]} values, got {len(values)}"
            )
        found[key] = np.array(values, dtype=np.float64).reshape(shape)
    for key in _CALIB_KEYS:
        if key not in found:
            raise MissingKey(f"calibration is missing {key}")
    return CalibrationSet(
        proj=found["P2"], rect=found["R0_rect"], extrinsic=found["Tr_velo_to_cam"]
    )


def format_calibration(calib: CalibrationSet) -> str:
    def row(key: str, m: np.ndarray) -> str:
        return key + ": " + " ".join(repr(float(x)) for x in m.ravel()) + "\n"

    return (
        row("P2", calib.proj)
        + row("R0_rect", calib.rect)
        + row("Tr_velo_to_cam", calib.extrinsic)
    )


def load_calibration(path) -> CalibrationSet:
    with open(path, "r", encoding="ascii") as fh:
        return read_calibration(fh.read())


def project(
    cloud: PointCloud, calib: CalibrationSet, width: int, height: int
) -> ProjectedPoints:
    """Project sensor-frame points into pixel coordinates.

    Keeps points with positive homogeneous scale that land in the half-open
    image domain ``0 <= u < width``, ``0 <= v < height``.  Output order follows
    input order.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    n = len(cloud)
    if n == 0:
        empty = np.zeros(0)
        return ProjectedPoints(empty, empty, empty, empty, np.zeros(0, dtype=np.int64))

    hom = np.column_stack([cloud.xyz, np.ones(n)])
    p_cam = hom @ calib.extrinsic.T
    p_rect = p_cam @ calib.rect.T
    img = np.column_stack([p_rect, np.ones(n)]) @ calib.proj.T
    s = img[:, 2]
    front = (s > 0) & (p_rect[:, 2] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, img[:, 0] / np.where(front, s, 1.0), -1.0)
        v = np.where(front, img[:, 1] / np.where(front, s, 1.0), -1.0)
    keep = front & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    idx = np.flatnonzero(keep)
    return ProjectedPoints(
        u=u[idx],
        v=v[idx],
        depth=p_rect[idx, 2],
        altitude=cloud.altitude[idx].copy(),
        source_index=idx.astype(np.int64),
    )
