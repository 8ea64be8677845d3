"""Altitude-difference images from projected LiDAR points.

Points projected onto the image plane are rasterised (nearest depth wins a
pixel), then every occupied pixel receives the mean distance-weighted absolute
altitude difference to the occupied pixels around it::

    V(x, y) = 1/M * sum_n |Z(x, y) - Z(n)| / ||n - (x, y)||

Flat road surfaces give values near zero; upright objects give large values.
The direct-projection image (normalised X/Y/Z per pixel) is provided as the
baseline representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfBounds, WindowTooSmall
from .lidar_io import PointCloud, ProjectedPoints

DEFAULT_WINDOW = 7


@dataclass(frozen=True)
class AltitudeMap:
    """Per-pixel altitude of the nearest projected point.

    ``altitude`` is 0 where ``occupancy`` is False.  ``source`` holds the index
    (into the projected-point sequence) of the point that won each pixel, or -1.
    """

    altitude: np.ndarray
    occupancy: np.ndarray
    source: np.ndarray

    @property
    def height(self) -> int:
        return self.altitude.shape[0]

    @property
    def width(self) -> int:
        return self.altitude.shape[1]

    @classmethod
    def from_arrays(cls, altitude: np.ndarray, occupancy: np.ndarray) -> "AltitudeMap":
        """Build a map directly from dense arrays (mainly for tests and tools)."""
        occ = np.asarray(occupancy, dtype=bool)
        alt = np.where(occ, np.asarray(altitude, dtype=np.float64), 0.0)
        src = np.full(occ.shape, -1, dtype=np.int64)
        return cls(alt, occ, src)


@dataclass(frozen=True)
class AdtImage:
    values: np.ndarray
    rescaled: np.ndarray

    @property
    def max_value(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ProjectionImage:
    """``(3, H, W)`` normalised X, Y, Z of the pixel's nearest point."""

    channels: np.ndarray
    occupancy: np.ndarray


def _winners(points: ProjectedPoints, width: int, height: int):
    """Flat pixel index and winning point index for every occupied pixel."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    u, v = np.asarray(points.u), np.asarray(points.v)
    if np.any((u < 0) | (u >= width) | (v < 0) | (v >= height)):
        raise OutOfBounds("projected point outside the image domain")
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    key = row * width + col
    order = np.lexsort((np.arange(n), points.depth, key))
    sorted_key = key[order]
    first = np.ones(n, dtype=bool)
    first[1:] = sorted_key[1:] != sorted_key[:-1]
    return sorted_key[first], order[first]


def rasterize_altitude(points: ProjectedPoints, width: int, height: int) -> AltitudeMap:
    """Rasterise projected points; the smallest depth wins, ties go to input order."""
    pix, win = _winners(points, width, height)
    altitude = np.zeros(height * width)
    occupancy = np.zeros(height * width, dtype=bool)
    source = np.full(height * width, -1, dtype=np.int64)
    altitude[pix] = points.altitude[win]
    occupancy[pix] = True
    source[pix] = win
    shape = (height, width)
    return AltitudeMap(altitude.reshape(shape), occupancy.reshape(shape), source.reshape(shape))


def rescale_to_uint8(values: np.ndarray) -> np.ndarray:
    """Map ``[0, max]`` onto ``[0, 255]`` with round-half-up; all zero if max is 0."""
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0.0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.floor(255.0 * values / peak + 0.5).astype(np.uint8)


def window_offsets(window: int) -> list[tuple[int, int]]:
    """Neighbour offsets ``(dy, dx)`` in fixed row-major scan order, centre excluded."""
    r = window // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dy, dx) != (0, 0)]


def adt_transform(
    amap: AltitudeMap, window: int = DEFAULT_WINDOW, fixed_m: bool = False
) -> AdtImage:
    """Altitude difference-based transformation of an altitude map.

    Args:
        amap: rasterised altitudes.
        window: odd side length of the square neighbourhood (>= 3).
        fixed_m: divide by ``window**2 - 1`` instead of the number of occupied
            neighbours.  Unoccupied neighbours contribute nothing either way.

    Returns:
        Raw per-pixel values and their per-image ``[0, 255]`` rescale.
    """
    if window < 3 or window % 2 == 0:
        raise WindowTooSmall(f"window must be odd and >= 3, got {window}")
    h, w = amap.altitude.shape
    r = window // 2
    z = np.pad(amap.altitude, r)
    occ = np.pad(amap.occupancy, r)
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    term = np.empty((h, w))
    centre = amap.altitude
    for dy, dx in window_offsets(window):
        zn = z[r + dy : r + dy + h, r + dx : r + dx + w]
        on = occ[r + dy : r + dy + h, r + dx : r + dx + w]
        np.subtract(centre, zn, out=term)
        np.abs(term, out=term)
        term *= 1.0 / np.hypot(dy, dx)
        term *= on
        total += term
        count += on
    if fixed_m:
        denom = np.full((h, w), float(window * window - 1))
    else:
        denom = count
    values = np.zeros((h, w))
    valid = amap.occupancy & (count > 0)
    values[valid] = total[valid] / denom[valid]
    return AdtImage(values, rescale_to_uint8(values))


def direct_projection(
    points: ProjectedPoints, cloud: PointCloud, width: int, height: int
) -> ProjectionImage:
    """Per-pixel min-max normalised sensor coordinates of the nearest point.

    Normalisation ranges come from all retained (projected) points.  An axis
    with zero extent maps to 0.5.
    """
    channels = np.zeros((3, height * width))
    occupancy = np.zeros(height * width, dtype=bool)
    pix, win = _winners(points, width, height)
    if len(points):
        xyz = cloud.xyz[points.source_index]
        lo, hi = xyz.min(axis=0), xyz.max(axis=0)
        span = hi - lo
        norm = np.full_like(xyz, 0.5)
        for a in range(3):
            if span[a] > 0:
                norm[:, a] = (xyz[:, a] - lo[a]) / span[a]
        channels[:, pix] = norm[win].T
        occupancy[pix] = True
    return ProjectionImage(
        channels.reshape(3, height, width), occupancy.reshape(height, width)
    )
