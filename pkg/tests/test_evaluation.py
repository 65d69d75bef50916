"""Metric oracles: exhaustive nearest-neighbor comparison for the Chamfer
index, enumerated voxel examples, binned reports, and the stochastic
inference harness."""

import json
import math

import numpy as np
import pytest

from flash_sr import evaluation as ev
from flash_sr import rangeimg as ri
from flash_sr import training as tr
from flash_sr.network import FlashConfig, FlashModel
from flash_sr.rangeimg import PointCloud, ProjectionConfig, RangeImage


def cloud(rows):
    return PointCloud(np.asarray(rows, dtype=np.float64))


# ----------------------------------------------------------------------- MAE

def test_mae_log_hand_example():
    gt = RangeImage(np.array([[math.e - 1.0, 0.0]]), np.array([[True, False]]))
    pred = RangeImage(np.array([[0.0, 99.0]]), np.array([[True, True]]))
    # |log1p(0) - log1p(e-1)| = 1 on the single valid cell
    assert ev.mae(pred, gt, "log") == pytest.approx(1.0, abs=1e-12)


def test_mae_meters_hand_example():
    gt = RangeImage(np.array([[10.0, 20.0]]), np.array([[True, True]]))
    pred = RangeImage(np.array([[12.0, 16.0]]), np.array([[True, True]]))
    assert ev.mae(pred, gt, "meters") == pytest.approx(3.0, abs=1e-12)


def test_mae_ignores_invalid_gt_cells():
    gt = RangeImage(np.array([[1.0, 50.0]]), np.array([[True, False]]))
    pred = RangeImage(np.array([[1.0, 0.0]]), np.array([[True, True]]))
    assert ev.mae(pred, gt, "meters") == 0.0


def test_mae_empty_mask_is_nan():
    gt = RangeImage(np.zeros((2, 2)), np.zeros((2, 2), bool))
    pred = RangeImage(np.zeros((2, 2)), np.zeros((2, 2), bool))
    assert math.isnan(ev.mae(pred, gt))


def test_mae_rejects_bad_arguments():
    a = RangeImage(np.zeros((2, 2)), np.ones((2, 2), bool))
    b = RangeImage(np.zeros((2, 3)), np.ones((2, 3), bool))
    with pytest.raises(ValueError):
        ev.mae(a, b)
    with pytest.raises(ValueError):
        ev.mae(a, a, "furlongs")


# ------------------------------------------------------------------- chamfer

def brute_chamfer(a, b):
    d2_ab = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    fwd = np.sqrt(d2_ab.min(axis=1)).mean()
    bwd = np.sqrt(d2_ab.min(axis=0)).mean()
    return 0.5 * (float(fwd) + float(bwd))


def random_instance(gen, kind):
    n, m = int(gen.integers(1, 260)), int(gen.integers(1, 260))
    if kind == 0:                      # uniform box
        a = gen.uniform(-40, 40, (n, 3))
        b = gen.uniform(-40, 40, (m, 3))
    elif kind == 1:                    # two tight, far-apart clusters
        a = gen.normal(0, 0.05, (n, 3))
        b = gen.normal(0, 0.05, (m, 3)) + np.array([55.0, -30.0, 4.0])
    elif kind == 2:                    # collinear with duplicates
        ta, tb = gen.uniform(0, 30, n), gen.uniform(0, 30, m)
        a = np.outer(ta, [1.0, 0.5, 0.0])
        b = np.outer(tb, [1.0, 0.5, 0.0])
        if m > 3:
            b[m // 2] = b[0]
    else:                              # mixed scales
        a = gen.normal(0, 1, (n, 3)) * gen.choice([1e-3, 1.0, 1e3], (n, 1))
        b = gen.normal(0, 1, (m, 3)) * gen.choice([1e-3, 1.0, 1e3], (m, 1))
    return a, b


def test_chamfer_matches_exhaustive_oracle_200_instances(monkeypatch):
    gen = np.random.default_rng(2024)
    for i in range(200):
        a, b = random_instance(gen, i % 4)
        # odd instances run through the grid index, even ones stay exhaustive
        monkeypatch.setattr(ev, "_BRUTE_PAIR_LIMIT", 0 if i % 2 else (1 << 22))
        got = ev.chamfer(cloud(a), cloud(b))
        assert abs(got - brute_chamfer(a, b)) <= 1e-12


def brute_chamfer_sq(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return 0.5 * (float(d2.min(axis=1).mean()) + float(d2.min(axis=0).mean()))


def test_chamfer_squared_matches_exhaustive_oracle(monkeypatch):
    gen = np.random.default_rng(909)
    for i in range(60):
        a, b = random_instance(gen, i % 4)
        monkeypatch.setattr(ev, "_BRUTE_PAIR_LIMIT", 0 if i % 2 else (1 << 22))
        got = ev.chamfer(cloud(a), cloud(b), squared=True)
        assert got == pytest.approx(brute_chamfer_sq(a, b), rel=1e-12, abs=1e-12)


def test_chamfer_squared_345_triangle():
    got = ev.chamfer(cloud([[0, 0, 0]]), cloud([[3, 4, 0]]), squared=True)
    assert got == 25.0


def test_chamfer_identical_clouds_is_zero():
    pts = np.random.default_rng(1).uniform(-10, 10, (50, 3))
    assert ev.chamfer(cloud(pts), cloud(pts.copy())) == 0.0


def test_chamfer_singletons_one_meter_apart():
    assert ev.chamfer(cloud([[0, 0, 0]]), cloud([[1, 0, 0]])) == 1.0


def test_chamfer_345_triangle():
    assert ev.chamfer(cloud([[0, 0, 0]]), cloud([[3, 4, 0]])) == 5.0


def test_chamfer_is_symmetric():
    gen = np.random.default_rng(2)
    a, b = gen.normal(size=(30, 3)), gen.normal(size=(40, 3))
    assert ev.chamfer(cloud(a), cloud(b)) == ev.chamfer(cloud(b), cloud(a))


def test_chamfer_translation_invariant():
    gen = np.random.default_rng(3)
    a, b = gen.normal(size=(25, 3)), gen.normal(size=(35, 3))
    t = np.array([5.0, -3.0, 2.0])
    d0 = ev.chamfer(cloud(a), cloud(b))
    d1 = ev.chamfer(cloud(a + t), cloud(b + t))
    assert d1 == pytest.approx(d0, rel=1e-9)


def test_chamfer_rejects_empty_cloud():
    a = cloud([[1, 2, 3]])
    empty = PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ev.chamfer(a, empty)
    with pytest.raises(ValueError):
        ev.chamfer(empty, a)


def test_grid_index_handles_query_far_from_tight_cluster(monkeypatch):
    # degenerate bbox shrinks the cell edge; a distant query must not stall
    monkeypatch.setattr(ev, "_BRUTE_PAIR_LIMIT", 0)
    b = np.full((100, 3), 2.0) + np.random.default_rng(4).normal(0, 1e-7, (100, 3))
    a = np.array([[70.0, -55.0, 30.0]])
    got = ev.chamfer(cloud(a), cloud(b))
    assert got == pytest.approx(brute_chamfer(a, b), abs=1e-12)


# --------------------------------------------------------------- voxel scores

def test_voxelize_floor_semantics():
    pts = cloud([[0.05, 0.05, 0.05], [-0.01, 0.0, 0.19]])
    assert ev.voxelize(pts) == {(0, 0, 0), (-1, 0, 1)}


def test_voxel_scores_enumerated_example():
    # pred occupies voxels {A, B}, gt occupies {A, C}: one shared of three
    pred = cloud([[0.05, 0.05, 0.05], [0.15, 0.05, 0.05]])
    gt = cloud([[0.05, 0.05, 0.05], [0.25, 0.05, 0.05]])
    iou, precision, recall, f1 = ev.voxel_scores(pred, gt)
    assert iou == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert precision == 0.5
    assert recall == 0.5
    assert f1 == 0.5


def test_voxel_scores_match_set_oracle_200_instances():
    gen = np.random.default_rng(77)
    for _ in range(200):
        n, m = int(gen.integers(1, 150)), int(gen.integers(1, 150))
        a = gen.uniform(-2, 2, (n, 3))
        b = gen.uniform(-2, 2, (m, 3))
        sa = set(map(tuple, np.floor(a / 0.1).astype(np.int64)))
        sb = set(map(tuple, np.floor(b / 0.1).astype(np.int64)))
        inter, union = len(sa & sb), len(sa | sb)
        iou, precision, recall, f1 = ev.voxel_scores(cloud(a), cloud(b))
        assert iou == (inter / union if union else 0.0)
        assert precision == inter / len(sa)
        assert recall == inter / len(sb)
        expect_f1 = (2 * precision * recall / (precision + recall)
                     if precision + recall else 0.0)
        assert f1 == expect_f1
        assert iou <= precision and iou <= recall


def test_voxel_scores_perfect_and_disjoint():
    pts = cloud([[0.5, 0.5, 0.5], [1.5, 1.5, 1.5]])
    assert ev.voxel_scores(pts, pts) == (1.0, 1.0, 1.0, 1.0)
    other = cloud([[9.0, 9.0, 9.0]])
    assert ev.voxel_scores(pts, other) == (0.0, 0.0, 0.0, 0.0)


# ------------------------------------------------------------------- binning

def test_filter_by_range_half_open_edges():
    pts = cloud([[29.999, 0, 0], [30.0, 0, 0], [59.999, 0, 0], [60.0, 0, 0]])
    near = ev._filter_by_range(pts, 0.0, 30.0)
    far = ev._filter_by_range(pts, 30.0, 60.0)
    assert near.count == 1
    assert far.count == 2          # the 30.0 m point belongs to the far bin
    np.testing.assert_array_equal(far.points[0], [30.0, 0, 0])


def test_binned_eval_splits_by_gt_range():
    cfg = ProjectionConfig(height=8, width=32)
    gt_vals = np.zeros((8, 32))
    gt_mask = np.zeros((8, 32), bool)
    gt_vals[2, 5], gt_mask[2, 5] = 10.0, True
    gt_vals[3, 20], gt_mask[3, 20] = 40.0, True
    pred_vals = gt_vals.copy()
    pred_vals[2, 5], pred_vals[3, 20] = 12.0, 35.0
    gt = RangeImage(gt_vals, gt_mask)
    pred = RangeImage(pred_vals, gt_mask.copy())
    bins = ev.binned_eval(pred, gt, cfg)
    near, far = bins["0-30m"], bins["30-60m"]
    assert near.mae_m == pytest.approx(2.0, abs=1e-12)
    assert far.mae_m == pytest.approx(5.0, abs=1e-12)
    assert near.pred_points == near.gt_points == 1
    assert far.pred_points == far.gt_points == 1


def test_binned_eval_absent_bin_is_none():
    cfg = ProjectionConfig(height=8, width=32)
    vals = np.zeros((8, 32))
    mask = np.zeros((8, 32), bool)
    vals[4, 4], mask[4, 4] = 5.0, True
    img = RangeImage(vals, mask)
    bins = ev.binned_eval(img, img, cfg)
    assert bins["0-30m"] is not None
    assert bins["30-60m"] is None


def test_bin_matches_whole_frame_when_one_bin_holds_everything():
    # two spatial clusters, both under 30 m: the near-bin report and the
    # whole-frame report see identical point sets and must agree exactly
    cfg = ProjectionConfig(height=8, width=32)
    vals = np.zeros((8, 32))
    mask = np.zeros((8, 32), bool)
    vals[2:4, 4:8] = 7.0 + 0.1 * np.arange(8).reshape(2, 4)
    mask[2:4, 4:8] = True
    vals[5:7, 20:24] = 21.0 + 0.1 * np.arange(8).reshape(2, 4)
    mask[5:7, 20:24] = True
    gt = RangeImage(vals, mask)
    pred_vals = vals.copy()
    pred_vals[mask] += 0.25
    pred = RangeImage(pred_vals, mask.copy())
    report = ev.evaluate(pred, gt, cfg)
    near, far = report.bins["0-30m"], report.bins["30-60m"]
    assert far is None
    assert near.cd == report.cd
    assert (near.iou, near.precision, near.recall, near.f1) == \
        (report.iou, report.precision, report.recall, report.f1)
    assert near.mae_m == report.mae_m
    assert near.gt_points == int(mask.sum())


def test_binned_counts_sum_to_points_below_60():
    cfg = ProjectionConfig(height=16, width=64)
    sample = tr.synth_scene(8, cfg)
    img = sample.high
    bins = ev.binned_eval(img, img, cfg)
    gt_cloud = ri.unproject(img, cfg)
    r = np.linalg.norm(gt_cloud.points, axis=1)
    total = int(((r >= 0) & (r < 60.0)).sum())
    summed = sum(b.gt_points for b in bins.values() if b is not None)
    assert summed == total


# ------------------------------------------------------------- whole reports

def test_evaluate_perfect_prediction():
    cfg = ProjectionConfig(height=16, width=64)
    img = tr.synth_scene(3, cfg).high
    report = ev.evaluate(img, img, cfg)
    assert report.mae_log == 0.0
    assert report.mae_m == 0.0
    assert report.cd == 0.0
    assert report.iou == report.precision == report.recall == report.f1 == 1.0


def test_report_json_round_trip():
    cfg = ProjectionConfig(height=16, width=64)
    img = tr.synth_scene(3, cfg).high
    report = ev.evaluate(img, img, cfg)
    parsed = json.loads(ev.report_to_json(report))
    assert parsed["mae_log"] == 0.0
    assert set(parsed["bins"]) == {"0-30m", "30-60m"}
    assert "latency_ms" not in parsed
    report.latency_ms = 12.5
    parsed = json.loads(ev.report_to_json(report))
    assert parsed["latency_ms"] == 12.5


def test_report_table_layout():
    cfg = ProjectionConfig(height=16, width=64)
    img = tr.synth_scene(3, cfg).high
    table = ev.report_table(ev.evaluate(img, img, cfg))
    lines = table.splitlines()
    assert "overall" in lines[2]
    assert any("0-30m" in ln for ln in lines)
    # every data row aligns with the header width
    assert len(set(len(ln) for ln in lines[:3])) <= 2


# ------------------------------------------------------- stochastic inference

MODEL_CFG = dict(height=8, width=32, channels=8, depths=(1, 1), window=(2, 4))


def test_mc_dropout_p_zero_matches_single_pass_bitwise():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.random.default_rng(5).normal(size=(8, 32))
    from flash_sr.tensorkit import Tensor, no_grad
    with no_grad():
        single = model.forward(Tensor(img[None])).data[0]
    mean, std, latency = ev.mc_dropout_infer(model, img, samples=5, batch=2,
                                             p=0.0)
    np.testing.assert_array_equal(mean, single)
    np.testing.assert_array_equal(std, np.zeros_like(std))
    assert latency > 0


def test_mc_dropout_p_positive_has_spread():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.random.default_rng(6).normal(size=(8, 32))
    mean, std, _ = ev.mc_dropout_infer(model, img, samples=6, batch=3, p=0.2)
    assert (std > 0).any()
    assert np.isfinite(mean).all()
    assert mean.shape == std.shape == (32, 32)


def test_mc_dropout_deterministic_across_calls():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.random.default_rng(7).normal(size=(8, 32))
    m1, s1, _ = ev.mc_dropout_infer(model, img, samples=4, batch=2, p=0.3)
    m2, s2, _ = ev.mc_dropout_infer(model, img, samples=4, batch=2, p=0.3)
    np.testing.assert_array_equal(m1, m2)
    np.testing.assert_array_equal(s1, s2)


def test_mc_dropout_restores_model_dropout():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.zeros((8, 32))
    ev.mc_dropout_infer(model, img, samples=2, batch=2, p=0.4)
    assert model.cfg.dropout == 0.0


def test_mc_dropout_single_sample():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.zeros((8, 32))
    mean, std, _ = ev.mc_dropout_infer(model, img, samples=1, batch=8, p=0.2)
    np.testing.assert_array_equal(std, np.zeros_like(std))
    assert mean.shape == (32, 32)


def test_mc_dropout_rejects_bad_arguments():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    with pytest.raises(ValueError):
        ev.mc_dropout_infer(model, np.zeros((8, 32)), samples=0)
    with pytest.raises(ValueError):
        ev.mc_dropout_infer(model, np.zeros((8, 32)), batch=0)


def test_time_single_pass_returns_positive_median():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    ms = ev.time_single_pass(model, np.zeros((8, 32)), warmup=1, reps=3)
    assert ms > 0


def test_time_single_pass_reproducible_back_to_back():
    model = FlashModel(FlashConfig(**MODEL_CFG))
    img = np.zeros((8, 32))
    a = ev.time_single_pass(model, img, warmup=5, reps=25)
    b = ev.time_single_pass(model, img, warmup=5, reps=25)
    assert abs(a - b) <= 0.2 * max(a, b)


class _SlowStartModel:
    """Stub whose first calls are artificially slow."""

    def __init__(self, slow_calls):
        self.slow_calls = slow_calls
        self.calls = 0

    def forward(self, x):
        import time as _t
        self.calls += 1
        if self.calls <= self.slow_calls:
            _t.sleep(0.05)
        return x


def test_time_single_pass_excludes_warmup_from_median():
    model = _SlowStartModel(slow_calls=2)
    ms = ev.time_single_pass(model, np.zeros((2, 2)), warmup=2, reps=5)
    assert model.calls == 7
    assert ms < 25.0
