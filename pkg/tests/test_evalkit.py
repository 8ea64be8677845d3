from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plard import evalkit as ek
from plard.errors import DimensionMismatch, EmptyInput, NoPositives, SingularHomography
from plard.evalkit import IGNORE, NON_ROAD, ROAD


def brute_force(pred, gt, count=256):
    """Independent per-threshold sweep with plain comparisons."""
    rows = []
    keep = gt != IGNORE
    for i in range(count):
        t = i / (count - 1)
        hit = pred >= t
        tp = int(np.sum(hit & (gt == ROAD) & keep))
        fp = int(np.sum(hit & (gt == NON_ROAD) & keep))
        fn = int(np.sum(~hit & (gt == ROAD) & keep))
        tn = int(np.sum(~hit & (gt == NON_ROAD) & keep))
        rows.append((t, tp, fp, fn, tn))
    best = None
    for t, tp, fp, fn, tn in rows:
        pre = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
        if best is None or f > best[0]:
            best = (f, pre, rec, fp / (fp + tn) if fp + tn else 0.0, fn / (tp + fn), t)
    return rows, best


def random_pair(rng, n=16, ignore=True):
    pred = rng.integers(0, 256, size=(n, n)) / 255.0
    gt = (rng.random((n, n)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
    if ignore:
        gt[rng.random((n, n)) < 0.1] = IGNORE
    gt[0, 0] = ROAD
    return pred, gt


class TestSweep:
    def test_counts_match_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            pred, gt = random_pair(rng)
            conf = ek.accumulate(pred, gt)
            rows, _ = brute_force(pred, gt)
            assert conf.tp.tolist() == [r[1] for r in rows]
            assert conf.fp.tolist() == [r[2] for r in rows]
            assert conf.fn.tolist() == [r[3] for r in rows]
            assert conf.tn.tolist() == [r[4] for r in rows]

    def test_metrics_match_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            pred, gt = random_pair(rng)
            rep = ek.compute_metrics(pred, gt)
            _, (f, pre, rec, fpr, fnr, t) = brute_force(pred, gt)
            assert rep.max_f == pytest.approx(100 * f, abs=1e-12)
            assert rep.pre == pytest.approx(100 * pre, abs=1e-12)
            assert rep.rec == pytest.approx(100 * rec, abs=1e-12)
            assert rep.fpr == pytest.approx(100 * fpr, abs=1e-12)
            assert rep.fnr == pytest.approx(100 * fnr, abs=1e-12)
            assert rep.threshold_at_maxf == t

    def test_perfect(self):
        gt = (np.random.default_rng(2).random((16, 16)) < 0.4).astype(np.uint8)
        rep = ek.compute_metrics(gt.astype(float), gt)
        assert rep.max_f == 100 and rep.fpr == 0 and rep.fnr == 0 and rep.ap == 100

    def test_inverted(self):
        gt = (np.random.default_rng(3).random((16, 16)) < 0.3).astype(np.uint8)
        p = gt.mean()
        rep = ek.compute_metrics(1.0 - gt, gt)
        assert rep.max_f == pytest.approx(100 * 2 * p / (p + 1), abs=1e-12)

    def test_working_point_consistency(self):
        pred, gt = random_pair(np.random.default_rng(4))
        rep = ek.compute_metrics(pred, gt)
        assert rep.max_f == pytest.approx(2 * rep.pre * rep.rec / (rep.pre + rep.rec), abs=1e-9)
        assert rep.fnr == pytest.approx(100 - rep.rec, abs=1e-9)

    def test_monotone_curves(self):
        pred, gt = random_pair(np.random.default_rng(5))
        c = ek.curves(ek.accumulate(pred, gt))
        assert np.all(np.diff(c["recall"]) <= 0) and np.all(np.diff(c["fpr"]) <= 0)

    def test_no_positives(self):
        gt = np.zeros((4, 4), np.uint8)
        with pytest.raises(NoPositives):
            ek.compute_metrics(np.zeros((4, 4)), gt)
        rep = ek.compute_metrics(np.zeros((4, 4)), gt, allow_degenerate=True)
        assert rep.degenerate and np.isnan(rep.rec)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ek.compute_metrics(np.zeros((4, 4)), np.zeros((4, 5), np.uint8))

    def test_ap_convention(self):
        # precision 1 up to recall 0.5, then precision 0.5 until recall 1
        precision = np.array([0.5, 1.0, 1.0])
        recall = np.array([1.0, 0.5, 0.0])
        anchors = ek.AP_ANCHORS
        want = np.mean([1.0 if r <= 0.5 else 0.5 for r in anchors])
        assert ek.average_precision(precision, recall) == pytest.approx(want)
        assert len(anchors) == 41

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounds(self, seed):
        pred, gt = random_pair(np.random.default_rng(seed))
        m = ek.compute_metrics(pred, gt).metrics()
        assert all(0 <= v <= 100 for v in m.values())

    def test_monotone_transform_invariance(self):
        # predictions on 64 grid levels, remapped by a random strictly
        # increasing table onto other grid levels: every cut stays reachable
        rng = np.random.default_rng(6)
        levels = rng.integers(0, 64, size=(16, 16))
        gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        table = np.sort(rng.choice(256, size=64, replace=False))
        a = ek.compute_metrics(levels / 255.0, gt)
        b = ek.compute_metrics(table[levels] / 255.0, gt)
        assert a.max_f == b.max_f and a.pre == b.pre and a.rec == b.rec


class TestAggregate:
    def test_single(self):
        pred, gt = random_pair(np.random.default_rng(7))
        a = ek.aggregate([ek.accumulate(pred, gt)])
        b = ek.compute_metrics(pred, gt)
        assert a.metrics() == b.metrics()

    def test_duplicate_invariance(self):
        pred, gt = random_pair(np.random.default_rng(8))
        c = ek.accumulate(pred, gt)
        assert ek.aggregate([c, c]).metrics() == ek.aggregate([c]).metrics()

    def test_pooling_equals_concatenation(self):
        rng = np.random.default_rng(9)
        (p1, g1), (p2, g2) = random_pair(rng), random_pair(rng)
        pooled = ek.aggregate([ek.accumulate(p1, g1), ek.accumulate(p2, g2)])
        concat = ek.compute_metrics(np.hstack([p1, p2]), np.hstack([g1, g2]))
        assert pooled.metrics() == concat.metrics()

    def test_order_invariance(self):
        rng = np.random.default_rng(10)
        confs = [ek.accumulate(*random_pair(rng)) for _ in range(4)]
        cats = ["UM", "UMM", "UU", "UM"]
        a = ek.aggregate(confs, cats)
        b = ek.aggregate(confs[::-1], cats[::-1])
        assert a.to_dict() == b.to_dict()
        assert sorted(a.per_category) == ["UM", "UMM", "UU"]

    def test_empty(self):
        with pytest.raises(EmptyInput):
            ek.aggregate([])

    def test_json(self):
        rng = np.random.default_rng(11)
        rep = ek.aggregate([ek.accumulate(*random_pair(rng))], ["UU"])
        text = rep.to_json()
        assert '"max_f"' in text and '"UU"' in text and '"threshold_at_maxf"' in text


class TestBev:
    def test_singular(self):
        with pytest.raises(SingularHomography):
            ek.BevMapping(np.zeros((3, 3)), (4, 4))

    def test_identity(self):
        rng = np.random.default_rng(0)
        img = rng.random((6, 8))
        out = ek.to_bev(img, ek.BevMapping(np.eye(3), (6, 8)))
        np.testing.assert_allclose(out, img, atol=1e-12)
        lab = rng.integers(0, 2, (6, 8)).astype(np.uint8)
        np.testing.assert_array_equal(ek.to_bev(lab, ek.BevMapping(np.eye(3), (6, 8)), labels=True), lab)

    def test_scaling(self):
        lab = np.zeros((8, 8), np.uint8)
        lab[3, 2] = ROAD
        bev = ek.BevMapping(np.diag([2.0, 2.0, 1.0]), (16, 16))
        out = ek.to_bev(lab, bev, labels=True)
        ys, xs = np.nonzero(out == ROAD)
        # pixel (x=2, y=3) covers [2,3)x[3,4) -> cells [4,6)x[6,8)
        assert set(zip(ys.tolist(), xs.tolist())) == {(6, 4), (6, 5), (7, 4), (7, 5)}

    def test_out_of_view(self):
        bev = ek.BevMapping(np.eye(3), (10, 10))
        conf = ek.to_bev(np.ones((4, 4)), bev)
        lab = ek.to_bev(np.ones((4, 4), np.uint8), bev, labels=True)
        assert np.isnan(conf[8, 8]) and lab[8, 8] == IGNORE
        # NaN cells are skipped during accumulation
        conf_counts = ek.accumulate(conf, lab)
        assert conf_counts.positives == 16

    def test_road_area_matches_geometry(self):
        from plard.synthscene import SceneSpec, generate

        spec = SceneSpec(seed=3, category="UU", lane_width=3.5, lanes=2, curb_height=0.0, roughness=0.0)
        bundle = generate(spec)
        bev = ek.ground_bev_mapping(bundle.calib.sensor_to_image(), (8.0, 30.0), (-8.0, 8.0), 0.05)
        lab = ek.to_bev(bundle.gt, bev, labels=True)
        area = float(np.sum(lab == ROAD)) * 0.05 ** 2
        want = spec.road_width * (30.0 - 8.0)
        assert abs(area - want) / want < 0.02

    def test_confidence_png_round_trip(self, tmp_path):
        p = np.random.default_rng(1).random((5, 7))
        ek.save_confidence_png(tmp_path / "p.png", p)
        np.testing.assert_array_equal(ek.load_confidence_png(tmp_path / "p.png"), ek.quantize_confidence(p))

    def test_gt_png_round_trip(self, tmp_path):
        lab = np.random.default_rng(2).choice([ROAD, NON_ROAD, IGNORE], size=(5, 6)).astype(np.uint8)
        ek.save_gt_png(tmp_path / "g.png", lab)
        np.testing.assert_array_equal(ek.load_gt_png(tmp_path / "g.png"), lab)
