from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plard.errors import (
    InvalidCalibration,
    MissingKey,
    NonFiniteValue,
    TruncatedRecord,
    WrongArity,
)
from plard.lidar_io import (
    CalibrationSet,
    PointCloud,
    format_calibration,
    load_point_cloud,
    project,
    read_calibration,
    read_point_cloud,
    write_point_cloud,
)


def pinhole(f=100.0, cx=32.0, cy=24.0):
    proj = np.array([[f, 0, cx, 0], [0, f, cy, 0], [0, 0, 1, 0]], dtype=float)
    return CalibrationSet(proj, np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))


def random_calib(rng):
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    ext = np.hstack([q, rng.normal(size=(3, 1))])
    rect = np.eye(3) + 0.01 * rng.normal(size=(3, 3))
    proj = np.array([[700.0, 0, 300, 40], [0, 700, 90, 0.2], [0, 0, 1, 0.003]])
    return CalibrationSet(proj, rect, ext)


def scalar_project(cloud, calib, width, height):
    """Per-point oracle redoing the chain with explicit loops."""
    out = []
    for i, (x, y, z, _) in enumerate(cloud.points.tolist()):
        src = [x, y, z, 1.0]
        cam = [sum(calib.extrinsic[r][c] * src[c] for c in range(4)) for r in range(3)]
        rect = [sum(calib.rect[r][c] * cam[c] for c in range(3)) for r in range(3)]
        hom = rect + [1.0]
        img = [sum(calib.proj[r][c] * hom[c] for c in range(4)) for r in range(3)]
        if img[2] <= 0 or rect[2] <= 0:
            continue
        u, v = img[0] / img[2], img[1] / img[2]
        if 0 <= u < width and 0 <= v < height:
            out.append((u, v, rect[2], z, i))
    return out


class TestPointCloudCodec:
    def test_single_record(self):
        blob = struct.pack("<4f", 1.0, 2.0, 3.0, 0.5)
        cloud = read_point_cloud(blob)
        assert len(cloud) == 1
        np.testing.assert_array_equal(cloud.points[0], [1.0, 2.0, 3.0, 0.5])

    def test_empty(self):
        assert len(read_point_cloud(b"")) == 0

    def test_truncated(self):
        with pytest.raises(TruncatedRecord):
            read_point_cloud(b"\x00" * 24)

    def test_non_finite(self):
        with pytest.raises(NonFiniteValue):
            read_point_cloud(struct.pack("<4f", 1.0, float("nan"), 0.0, 0.0))
        with pytest.raises(NonFiniteValue):
            PointCloud(np.array([[0.0, np.inf, 0.0, 0.0]]))

    def test_order_preserved(self):
        pts = np.arange(40, dtype=np.float32).reshape(10, 4)
        cloud = read_point_cloud(pts.tobytes())
        np.testing.assert_array_equal(cloud.points, pts)

    def test_points_are_read_only(self):
        cloud = PointCloud(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, width=32)] * 4), max_size=30))
    def test_round_trip(self, rows):
        cloud = PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 4))
        again = read_point_cloud(write_point_cloud(cloud))
        np.testing.assert_array_equal(again.points, cloud.points)

    def test_load_from_file(self, tmp_path):
        cloud = PointCloud(np.array([[1.0, -2.0, 0.25, 0.5]]))
        path = tmp_path / "c.bin"
        path.write_bytes(write_point_cloud(cloud))
        np.testing.assert_array_equal(load_point_cloud(path).points, cloud.points)


CALIB_TEXT = """P0: 1 0 0 0 0 1 0 0 0 0 1 0
P2: 1 0 0 0 0 1 0 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0
Tr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0
"""


class TestCalibration:
    def test_identity_decode(self):
        calib = read_calibration(CALIB_TEXT)
        np.testing.assert_array_equal(calib.proj, np.hstack([np.eye(3), np.zeros((3, 1))]))
        np.testing.assert_array_equal(calib.rect, np.eye(3))
        np.testing.assert_array_equal(calib.extrinsic, np.hstack([np.eye(3), np.zeros((3, 1))]))

    def test_row_major(self):
        text = CALIB_TEXT.replace("P2: 1 0 0 0 0 1 0 0 0 0 1 0", "P2: 1 2 3 4 5 6 7 8 9 10 11 12")
        calib = read_calibration(text)
        assert calib.proj[0, 3] == 4.0 and calib.proj[1, 0] == 5.0

    def test_missing_key(self):
        text = "\n".join(l for l in CALIB_TEXT.splitlines() if not l.startswith("R0_rect"))
        with pytest.raises(MissingKey):
            read_calibration(text)

    def test_wrong_arity(self):
        text = CALIB_TEXT.replace("P2: 1 0 0 0 0 1 0 0 0 0 1 0", "P2: 1 0 0 0 0 1 0 0 0 0 1")
        with pytest.raises(WrongArity):
            read_calibration(text)

    def test_singular_rect(self):
        with pytest.raises(InvalidCalibration):
            CalibrationSet(np.eye(3, 4), np.zeros((3, 3)), np.eye(3, 4))

    def test_zero_focal(self):
        proj = np.eye(3, 4)
        proj[1, 1] = 0.0
        with pytest.raises(InvalidCalibration):
            CalibrationSet(proj, np.eye(3), np.eye(3, 4))

    def test_format_round_trip(self):
        calib = random_calib(np.random.default_rng(3))
        again = read_calibration(format_calibration(calib))
        np.testing.assert_array_equal(again.proj, calib.proj)
        np.testing.assert_array_equal(again.rect, calib.rect)
        np.testing.assert_array_equal(again.extrinsic, calib.extrinsic)


class TestProject:
    def test_optical_axis(self):
        calib = pinhole()
        pts = project(PointCloud(np.array([[0.0, 0.0, 7.5, 0.0]])), calib, 64, 48)
        assert len(pts) == 1
        assert pts.u[0] == pytest.approx(32.0) and pts.v[0] == pytest.approx(24.0)
        assert pts.depth[0] == pytest.approx(7.5)

    def test_behind_camera_excluded(self):
        cloud = PointCloud(np.array([[0.0, 0.0, -2.0, 0.0], [0.0, 0.0, 0.0, 0.0]]))
        assert len(project(cloud, pinhole(), 64, 48)) == 0

    def test_half_open_domain(self):
        # u = f*x/z + cx: x = 0.32, z = 1 gives u = 64 exactly, which is outside
        cloud = PointCloud(np.array([[0.32, 0.0, 1.0, 0.0], [-0.32, 0.0, 1.0, 0.0]]))
        pts = project(cloud, pinhole(), 64, 48)
        assert len(pts) == 1 and pts.u[0] == pytest.approx(0.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        calib = random_calib(rng)
        xyz = rng.normal(scale=8.0, size=(100, 3))
        cloud = PointCloud(np.column_stack([xyz, rng.random(100)]))
        # put half the points in front of the camera so some survive
        front = calib.extrinsic[:, :3].T @ (np.array([0, 0, 10.0]) - calib.extrinsic[:, 3])
        cloud = PointCloud(np.vstack([cloud.points, np.column_stack([front + rng.normal(size=(100, 3)), np.zeros(100)])]))
        got = project(cloud, calib, 640, 200)
        want = scalar_project(cloud, calib, 640, 200)
        assert len(got) == len(want) > 0
        for k, (u, v, d, z, i) in enumerate(want):
            assert abs(got.u[k] - u) < 1e-9 and abs(got.v[k] - v) < 1e-9
            assert got.depth[k] == pytest.approx(d, abs=1e-12)
            assert got.altitude[k] == z and got.source_index[k] == i

    def test_homogeneous_scale_invariance(self):
        rng = np.random.default_rng(1)
        calib = random_calib(rng)
        front = calib.extrinsic[:, :3].T @ (np.array([0, 0, 10.0]) - calib.extrinsic[:, 3])
        cloud = PointCloud(np.column_stack([front + rng.normal(size=(200, 3)), np.zeros(200)]))
        scaled = CalibrationSet(3.7 * calib.proj, calib.rect, calib.extrinsic)
        a = project(cloud, calib, 640, 200)
        b = project(cloud, scaled, 640, 200)
        np.testing.assert_array_equal(a.source_index, b.source_index)
        assert np.max(np.abs(a.u - b.u)) < 1e-9 and np.max(np.abs(a.v - b.v)) < 1e-9

    def test_retained_points_satisfy_bounds(self):
        rng = np.random.default_rng(2)
        cloud = PointCloud(np.column_stack([rng.normal(size=(500, 2)), rng.uniform(-1, 5, 500), np.zeros(500)]))
        pts = project(cloud, pinhole(), 64, 48)
        assert len(pts) <= len(cloud)
        assert np.all((pts.u >= 0) & (pts.u < 64) & (pts.v >= 0) & (pts.v < 48) & (pts.depth > 0))
        assert np.all(np.diff(pts.source_index) > 0)

    def test_altitude_is_sensor_z(self):
        # sensor z up, camera looking along sensor x: altitude must be sensor z
        ext = np.array([[0.0, -1, 0, 0], [0, 0, -1, 0], [1, 0, 0, 0]])
        calib = CalibrationSet(pinhole().proj, np.eye(3), ext)
        pts = project(PointCloud(np.array([[10.0, 0.0, 1.25, 0.0]])), calib, 64, 48)
        assert pts.altitude[0] == 1.25 and pts.depth[0] == pytest.approx(10.0)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            project(PointCloud(np.zeros((1, 4))), pinhole(), 0, 10)
