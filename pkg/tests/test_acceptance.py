"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed together in the pytest terminal summary.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from plard import ablation as ab
from plard import autodiff as ad
from plard import cli
from plard import evalkit as ek
from plard import pipeline as pl
from plard import synthscene as ss
from plard.adt import AltitudeMap, adt_transform, rasterize_altitude
from plard.autodiff import Tensor
from plard.lidar_io import project
from plard.model import (
    LossWeights,
    ModelConfig,
    Outputs,
    PlardModel,
    StreamConfig,
    forward,
    fsa_forward,
    fsa_mac_formula,
    one_hot_target,
    total_loss,
)

TOY = StreamConfig((8, 16, 32, 64, 64))


def loop_adt(alt, occ, window=7):
    """Per-pixel, per-neighbour double loop, independent of the vectorised code."""
    h, w = alt.shape
    r = window // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if not occ[y, x]:
                continue
            total, m = 0.0, 0
            for ny in range(max(0, y - r), min(h, y + r + 1)):
                for nx in range(max(0, x - r), min(w, x + r + 1)):
                    if (ny, nx) != (y, x) and occ[ny, nx]:
                        total += abs(alt[y, x] - alt[ny, nx]) / math.hypot(ny - y, nx - x)
                        m += 1
            out[y, x] = total / m if m else 0.0
    return out


def sparse_map(rng, size=32):
    occ = rng.random((size, size)) < rng.uniform(0.3, 1.0)
    return AltitudeMap.from_arrays(rng.normal(scale=2.0, size=(size, size)), occ)


def test_c01_adt_matches_loop_oracle(criterion):
    rng = np.random.default_rng(101)
    maps = [sparse_map(rng) for _ in range(100)]
    t0 = time.perf_counter()
    got = [adt_transform(m).values for m in maps]
    elapsed = time.perf_counter() - t0
    worst = max(float(np.max(np.abs(g - loop_adt(m.altitude, m.occupancy)))) for g, m in zip(got, maps))
    criterion(1, worst <= 1e-12 and elapsed < 5.0,
              f"max |diff| {worst:.1e} over 100 maps, transform time {elapsed:.2f} s")


def test_c02_adt_analytic_cases(criterion):
    flat = adt_transform(AltitudeMap.from_arrays(np.full((16, 16), 2.5), np.ones((16, 16), bool)))
    flat_ok = bool(np.all(flat.values == 0.0))
    alt = np.zeros((3, 3))
    alt[1, 1] = 1.0
    spike = adt_transform(AltitudeMap.from_arrays(alt, np.ones((3, 3), bool)), window=3).values[1, 1]
    spike_err = abs(spike - (4 + 2 * math.sqrt(2)) / 8)
    rng = np.random.default_rng(202)
    shift_err = 0.0
    for _ in range(20):
        m = sparse_map(rng, 24)
        c = rng.uniform(-50, 50)
        moved = AltitudeMap.from_arrays(m.altitude + c, m.occupancy)
        shift_err = max(shift_err, float(np.max(np.abs(adt_transform(moved).values - adt_transform(m).values))))
    criterion(2, flat_ok and spike_err <= 1e-12 and shift_err <= 1e-9,
              f"flat all-zero {flat_ok}, spike error {spike_err:.1e}, translation drift {shift_err:.1e}")


def test_c03_adt_linear_in_window_area(criterion):
    rng = np.random.default_rng(303)
    amap = AltitudeMap.from_arrays(rng.normal(size=(256, 1024)), np.ones((256, 1024), bool))
    windows = (3, 7, 11, 15)
    t_start = time.perf_counter()
    times = []
    for w in windows:
        runs = []
        for _ in range(3):
            t0 = time.perf_counter()
            adt_transform(amap, w)
            runs.append(time.perf_counter() - t0)
        times.append(min(runs))
    total = time.perf_counter() - t_start
    area = np.array([w * w for w in windows], dtype=float)
    slope, intercept = np.polyfit(area, times, 1)
    fit = slope * area + intercept
    ratios = np.array(times) / fit
    ok = bool(np.all(fit > 0) and np.all(ratios <= 2.0) and np.all(ratios >= 0.5)) and total < 60
    shown = ", ".join(f"w{w}: {t:.3f}s" for w, t in zip(windows, times))
    criterion(3, ok, f"{shown}; measured/fit in [{ratios.min():.2f}, {ratios.max():.2f}], total {total:.1f} s")


@pytest.mark.slow
def test_c04_full_graph_gradient(criterion):
    rng = np.random.default_rng(404)
    model = PlardModel(ModelConfig(TOY), seed=4)
    image, adt = rng.random((1, 3, 32, 96)), rng.random((1, 1, 32, 96))
    target, ignore = one_hot_target((rng.random((1, 32, 96)) > 0.5).astype(np.uint8))
    t0 = time.perf_counter()
    rep = ad.gradient_check(lambda p: total_loss(forward(model, image, adt), target, LossWeights(), ignore),
                            model.params, tol=1e-4, samples=50)
    elapsed = time.perf_counter() - t0
    # every tensor with >= 50 entries contributes 50 coordinates, smaller ones all of theirs
    expected = sum(min(t.data.size, 50) for _, t in model.params)
    covered = rep.checked + len(rep.kinks) == expected
    ok = rep.passed and covered and len(rep.kinks) <= 0.01 * expected and elapsed < 600
    criterion(4, ok, f"{rep.summary()}; {len(model.params.names())} tensors, {elapsed:.0f} s")


def test_c05_loss_anchor(criterion):
    half = Tensor(np.full((1, 2, 8, 8), 0.5))
    target, ignore = one_hot_target(np.random.default_rng(5).integers(0, 2, (1, 8, 8)))
    loss = total_loss(Outputs(half, half, half), target, LossWeights(1.0, 0.4, 0.16), ignore).item()
    want = 1.56 * -math.log10(0.5)
    criterion(5, abs(loss - want) <= 1e-6 and abs(loss - 0.46961) <= 1e-5,
              f"loss {loss:.8f} vs 1.56*log10(2) = {want:.8f}")


def test_c06_architectural_reductions(criterion):
    rng = np.random.default_rng(606)
    image, adt = rng.random((2, 3, 32, 96)), rng.random((2, 1, 32, 96))
    fused = PlardModel(ModelConfig(TOY, lam=0.0), seed=6)
    plain = PlardModel(ModelConfig(TOY, input_mode="none"), seed=6)
    shared = all(np.array_equal(fused.params[n].data, t.data) for n, t in plain.params)
    same = np.array_equal(forward(fused, image, adt).parsing.data, forward(plain, image).parsing.data)
    model = PlardModel(ModelConfig(TOY), seed=7)
    zeroed = True
    for module in model.fsa.values():
        for layer in (module.alpha_head, module.beta_head):
            layer.weight.data[...] = 0
            layer.bias.data[...] = 0
        c, lc = module.proj.out_channels, module.proj.in_channels
        out = fsa_forward(Tensor(rng.normal(size=(2, c, 4, 6))), Tensor(rng.normal(size=(2, lc, 4, 6))), module)
        zeroed = zeroed and bool(np.all(out.data == 0))
    criterion(6, shared and same and zeroed,
              f"shared weights {shared}, lambda=0 bit-identical {same}, zeroed heads give 0 {zeroed}")


def brute_counts(pred, gt):
    rows = []
    for i in range(256):
        hit = pred >= i / 255
        rows.append((int(np.sum(hit & (gt == 1))), int(np.sum(hit & (gt == 0))),
                     int(np.sum(~hit & (gt == 1))), int(np.sum(~hit & (gt == 0)))))
    return rows


def brute_maxf(rows):
    best = -1.0
    for tp, fp, fn, _ in rows:
        pre = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        best = max(best, 2 * pre * rec / (pre + rec) if pre + rec else 0.0)
    return 100 * best


def test_c07_metrics_oracle(criterion):
    rng = np.random.default_rng(707)
    exact = True
    for _ in range(50):
        pred = rng.integers(0, 256, (16, 16)) / 255.0
        gt = (rng.random((16, 16)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        gt[rng.random((16, 16)) < 0.05] = ek.IGNORE
        gt[0, 0] = ek.ROAD
        conf = ek.accumulate(pred, gt)
        rows = brute_counts(pred, gt)
        exact = exact and list(zip(conf.tp.tolist(), conf.fp.tolist(), conf.fn.tolist(), conf.tn.tolist())) == rows
        exact = exact and ek.compute_metrics(pred, gt).max_f == pytest.approx(brute_maxf(rows), abs=1e-12)
    gt = (rng.random((16, 16)) < 0.4).astype(np.uint8)
    perfect = ek.compute_metrics(gt.astype(float), gt)
    perfect_ok = perfect.max_f == 100 and perfect.fpr == 0 and perfect.fnr == 0
    criterion(7, exact and perfect_ok, f"50 pairs x 256 thresholds exact {exact}; perfect "
              f"MaxF {perfect.max_f}, FPR {perfect.fpr}, FNR {perfect.fnr}")


def test_c08_fsa_macs(criterion):
    from plard.autodiff import ParameterStore
    from plard.model import FsaModule

    c, h, w = 64, 24, 80
    m = FsaModule.create(ParameterStore(0), "f", c, c // 8)
    with ad.count_macs() as mc:
        fsa_forward(Tensor(np.zeros((1, c, h, w))), Tensor(np.zeros((1, c // 8, h, w))), m)
    want = (c // 8 + 4 * c) * c * h * w
    criterion(8, mc.total == want == fsa_mac_formula(c, 8, h, w),
              f"counted {mc.total} MACs, (C/8+4C)*C*H*W = {want}")


@pytest.mark.slow
def test_c09_directional_ablation(criterion, tmp_path):
    cfg = ab.AblationConfig()
    assert (cfg.train_count, cfg.test_count, cfg.corruption_level) == (64, 32, 0.7)
    assert cfg.base_train_config().epochs <= 60
    t0 = time.perf_counter()
    splits = ab.make_splits(cfg)
    runs = [ab.run_ablation(cfg, seed=0, splits=splits)]
    maxf = ab.median_maxf(runs)
    how = "seed 0"
    if not ab.ordering_holds(maxf):
        runs += [ab.run_ablation(cfg, seed=s, splits=splits) for s in (1, 2)]
        maxf = ab.median_maxf(runs)
        how = "median of seeds 0-2"
    elapsed = time.perf_counter() - t0
    (tmp_path / "ablation.md").write_text(ab.to_markdown(runs[0]))
    shown = ", ".join(f"{k} {v:.2f}" for k, v in maxf.items())
    criterion(9, ab.ordering_holds(maxf) and elapsed < 7200, f"{how}: {shown}; {elapsed / 60:.1f} min")


def test_c10_adt_separability(criterion):
    ok = total = 0
    for i in range(100):
        b = ss.generate(ss.random_spec(10_000 + i, ss.CATEGORIES[i % 3], 0.0))
        pts = project(b.cloud, b.calib, b.width, b.height)
        amap = rasterize_altitude(pts, b.width, b.height)
        v = adt_transform(amap).values
        road = v[amap.occupancy & (b.surface == ss.ROAD_SURFACE)]
        obstacle = v[amap.occupancy & (b.surface >= ss.FIRST_BOX)]
        if road.size == 0 or obstacle.size == 0:
            continue
        total += 1
        ok += road.mean() < 0.5 * obstacle.mean()
    criterion(10, total == 100 and ok >= 95, f"{ok}/{total} scenes with road mean < 0.5 x obstacle mean")


def test_c11_determinism(criterion, tmp_path):
    assert cli.main(["synth", "--count", "6", "--seed", "11", "--corruption", "0.7", "--width", "160",
                     "--height", "48", "--out", str(tmp_path / "ds")]) == 0
    train = {"epochs": 3, "lr_start": 1e-2, "lr_end": 1e-4, "stage_channels": [8, 16, 32, 64, 64],
             "lidar_divisor": 2}
    for run in ("a", "b"):
        doc = {"train": train, "train_dir": str(tmp_path / "ds"), "val_dir": str(tmp_path / "ds"),
               "output_dir": str(tmp_path / run)}
        (tmp_path / f"{run}.json").write_text(json.dumps(doc))
        assert cli.main(["--seed", "5", "train", "--config", str(tmp_path / f"{run}.json")]) == 0
    same_ckpt = (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()
    assert cli.main(["infer", "--checkpoint", str(tmp_path / "a" / "checkpoint.bin"), "--scenes",
                     str(tmp_path / "ds"), "--out", str(tmp_path / "pred")]) == 0
    assert cli.main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "ds"),
                     "--out", str(tmp_path / "report.json")]) == 0
    disk = json.loads((tmp_path / "report.json").read_text())["perspective"]
    model, meta = pl.load_model(tmp_path / "a" / "checkpoint.bin")
    samples = pl.prepare_samples(ss.load_dataset(tmp_path / "ds"), meta["model"]["input_mode"])
    memory = json.loads(json.dumps(pl.evaluate(model, samples).to_dict()))
    same_metrics = disk == memory
    criterion(11, same_ckpt and same_metrics,
              f"checkpoints byte-identical {same_ckpt}; disk MaxF {disk['max_f']:.4f} == in-process "
              f"{memory['max_f']:.4f}: {same_metrics}")
