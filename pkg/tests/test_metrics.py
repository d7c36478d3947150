"""Five-metric suite vs direct-definition oracles, plus directory evaluation."""

import numpy as np
import pytest
from PIL import Image

import oracles
from triflownet.metrics import (compute_all, e_measure_mean, evaluate_dirs,
                                f_measure_mean, f_measure_weighted, mae,
                                quantize, s_measure)


def _random_pair(seed, shape=(8, 8)):
    rng = np.random.default_rng(seed)
    s = rng.random(shape)
    g = rng.random(shape) > 0.55
    return s, g


class TestMae:
    def test_perfect_and_inverted(self):
        _, g = _random_pair(0)
        g = g.astype(np.float64)
        assert mae(g, g) == 0.0
        assert mae(1.0 - g, g) == 1.0

    def test_hand_case(self):
        s = np.array([[0.5, 0.0], [1.0, 0.25]])
        g = np.array([[1, 0], [1, 0]])
        assert abs(mae(s, g) - 0.1875) < 1e-12

    def test_complement_identity(self):
        for seed in range(5):
            s, g = _random_pair(seed)
            assert abs(mae(s, g) + mae(1.0 - s, g) - 1.0) < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            mae(np.zeros((4, 4)), np.zeros((5, 5)))


class TestFMeasureMean:
    def test_perfect_binary_prediction_scores_one(self):
        _, g = _random_pair(1)
        assert abs(f_measure_mean(g.astype(float), g) - 1.0) < 1e-9

    def test_uniform_zero_prediction_scores_zero(self):
        _, g = _random_pair(2)
        assert f_measure_mean(np.zeros_like(g, dtype=float), g) == 0.0

    def test_single_threshold_closed_form(self):
        # One FP and one FN at tau=127: P = R = 2/3, so F equals 2/3 there.
        g = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 0]])
        s = np.array([[1.0, 1.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.6]])
        pred = quantize(s) > 127
        gt = g > 0
        tp = float((pred & gt).sum())
        precision = tp / pred.sum()
        recall = tp / gt.sum()
        f = 1.3 * precision * recall / (0.3 * precision + recall)
        assert abs(f - 2.0 / 3.0) < 1e-12
        assert abs(f_measure_mean(s, g) - oracles.metric_f_mean(s, g)) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_oracle(self, seed):
        s, g = _random_pair(seed + 10)
        assert abs(f_measure_mean(s, g) - oracles.metric_f_mean(s, g)) < 1e-6

    def test_empty_gt_conventions(self):
        g = np.zeros((6, 6), dtype=bool)
        assert f_measure_mean(np.zeros((6, 6)), g) == 1.0
        assert f_measure_mean(np.full((6, 6), 0.4), g) == 0.0

    def test_invariant_to_quantization_preserving_jitter(self):
        s, g = _random_pair(30)
        q = quantize(s)
        rng = np.random.default_rng(31)
        jitter = (rng.random(s.shape) - 0.5) * (0.9 / 255.0)
        s2 = np.clip(q / 255.0 + jitter, 0.0, 1.0)
        s2[quantize(s2) != q] = (q[quantize(s2) != q]) / 255.0
        assert np.array_equal(quantize(s2), q)
        assert f_measure_mean(s, g) == f_measure_mean(s2, g)


class TestFMeasureWeighted:
    def test_perfect_prediction_scores_one(self):
        _, g = _random_pair(3)
        assert abs(f_measure_weighted(g.astype(float), g) - 1.0) < 1e-6

    def test_inverted_interior_object_scores_zero(self):
        g = np.zeros((12, 12), dtype=bool)
        g[4:8, 4:8] = True
        s = 1.0 - g.astype(float)
        assert abs(f_measure_weighted(s, g)) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_definition_oracle(self, seed):
        s, g = _random_pair(seed + 40)
        assert abs(f_measure_weighted(s, g) - oracles.metric_wf(s, g)) < 1e-6

    def test_empty_gt_conventions(self):
        g = np.zeros((5, 5), dtype=bool)
        assert f_measure_weighted(np.zeros((5, 5)), g) == 1.0
        assert f_measure_weighted(np.full((5, 5), 0.9), g) == 0.0

    def test_equidistant_foreground_ties_match_oracle(self):
        # (0,0) ties between fg at (0,2) and (2,0); the smaller (row, col)
        # must win on both sides even though their errors differ.
        g = np.zeros((5, 5), dtype=bool)
        g[0, 2] = g[2, 0] = True
        s = np.zeros((5, 5))
        s[0, 2] = 0.9
        s[2, 0] = 0.1
        assert abs(f_measure_weighted(s, g) - oracles.metric_wf(s, g)) < 1e-9

    def test_sparse_corner_foreground_far_offsets(self):
        # Nearest-fg offsets larger than one image dimension must stay exact.
        g = np.zeros((6, 20), dtype=bool)
        g[0, 0] = True
        s = np.full((6, 20), 0.5)
        s[0, 0] = 1.0
        assert abs(f_measure_weighted(s, g) - oracles.metric_wf(s, g)) < 1e-9


class TestSMeasure:
    def test_perfect_prediction_scores_one(self):
        _, g = _random_pair(4)
        assert abs(s_measure(g.astype(float), g) - 1.0) < 1e-6

    def test_all_background_convention(self):
        g = np.zeros((6, 6))
        assert s_measure(np.zeros((6, 6)), g) == 1.0
        assert abs(s_measure(np.full((6, 6), 0.25), g) - 0.75) < 1e-12

    def test_all_foreground_convention(self):
        g = np.ones((6, 6))
        assert abs(s_measure(np.full((6, 6), 0.8), g) - 0.8) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_definition_oracle(self, seed):
        s, g = _random_pair(seed + 50, shape=(16, 16))
        assert abs(s_measure(s, g) - oracles.metric_sm(s, g)) < 1e-6


class TestEMeasureMean:
    def test_perfect_prediction_scores_one(self):
        _, g = _random_pair(5)
        assert abs(e_measure_mean(g.astype(float), g) - 1.0) < 1e-9

    def test_inverted_prediction_matches_oracle(self):
        _, g = _random_pair(6)
        s = 1.0 - g.astype(float)
        assert abs(e_measure_mean(s, g) - oracles.metric_e_mean(s, g)) < 1e-9

    def test_single_threshold_hand_value(self):
        # 4x4, half fg; prediction misses one fg pixel at every threshold.
        g = np.zeros((4, 4))
        g[:2, :] = 1.0
        s = g.copy()
        s[0, 0] = 0.0
        by_hand = oracles.metric_e_mean(s, g)
        assert abs(e_measure_mean(s, g) - by_hand) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_oracle(self, seed):
        s, g = _random_pair(seed + 60)
        assert abs(e_measure_mean(s, g) - oracles.metric_e_mean(s, g)) < 1e-6

    def test_degenerate_gt_branches(self):
        empty = np.zeros((4, 4))
        assert abs(e_measure_mean(np.zeros((4, 4)), empty) - 1.0) < 1e-12
        full = np.ones((4, 4))
        assert abs(e_measure_mean(np.ones((4, 4)), full) - 1.0) < 1e-12


class TestAllMetricsRange:
    @pytest.mark.parametrize("seed", range(3))
    def test_all_values_in_unit_interval(self, seed):
        s, g = _random_pair(seed + 70)
        for name, value in compute_all(s, g).items():
            assert 0.0 <= value <= 1.0, name


def _write_gray(path, arr):
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def _make_eval_tree(tmp_path, n=10):
    gt_dir = tmp_path / "gt"
    pred_dir = tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        mask = (rng.random((16, 16)) > 0.5).astype(np.uint8) * 255
        _write_gray(gt_dir / f"img{i:02d}.png", mask)
        _write_gray(pred_dir / f"img{i:02d}.png", mask)
    return pred_dir, gt_dir


class TestEvaluateDirs:
    def test_gt_copies_score_perfectly(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=4)
        report = evaluate_dirs(pred_dir, gt_dir)
        agg = report.aggregate
        for name in ("sm", "fbeta_mean", "fbeta_weighted", "em_mean"):
            assert abs(agg[name] - 1.0) < 1e-6
        assert abs(agg["mae"]) < 1e-6
        assert not report.errors

    def test_one_corrupt_file_among_ten(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=10)
        (pred_dir / "img03.png").write_text("not an image")
        report = evaluate_dirs(pred_dir, gt_dir)
        assert len(report.per_image) == 9
        assert len(report.errors) == 1
        assert "img03" in report.errors[0]

    def test_size_mismatch_recorded_and_evaluation_continues(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=3)
        _write_gray(pred_dir / "img01.png", np.zeros((8, 8)))
        report = evaluate_dirs(pred_dir, gt_dir)
        assert len(report.per_image) == 2
        assert any("size mismatch" in e for e in report.errors)

    def test_unmatched_filenames_listed(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=2)
        (pred_dir / "img00.png").unlink()
        _write_gray(pred_dir / "extra.png", np.zeros((16, 16)))
        report = evaluate_dirs(pred_dir, gt_dir)
        assert any("missing prediction" in e and "img00" in e for e in report.errors)
        assert any("no ground truth" in e for e in report.errors)

    def test_aggregate_equals_mean_of_per_image(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=5)
        rng = np.random.default_rng(1)
        for i in range(5):
            _write_gray(pred_dir / f"img{i:02d}.png", rng.random((16, 16)) * 255)
        report = evaluate_dirs(pred_dir, gt_dir)
        for name in ("sm", "mae"):
            values = [r[name] for r in report.per_image]
            assert abs(report.aggregate[name] - float(np.mean(values))) < 1e-12

    def test_attribute_slices_match_subset_means(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=6)
        rng = np.random.default_rng(2)
        for i in range(6):
            _write_gray(pred_dir / f"img{i:02d}.png", rng.random((16, 16)) * 255)
        attr_file = tmp_path / "attrs.csv"
        lines = []
        for i in range(6):
            tags = "night" if i % 2 else "day"
            if i < 2:
                tags += ";clutter"
            lines.append(f"img{i:02d}.png,{tags}")
        attr_file.write_text("\n".join(lines))
        report = evaluate_dirs(pred_dir, gt_dir, attr_file=attr_file)
        day = [r for r in report.per_image if int(r["name"][3:]) % 2 == 0]
        expected = float(np.mean([r["mae"] for r in day]))
        assert abs(report.attributes["day"]["mae"] - expected) < 1e-12
        assert report.attributes["clutter"]["count"] == 2

    def test_report_round_trips_as_json(self, tmp_path):
        pred_dir, gt_dir = _make_eval_tree(tmp_path, n=2)
        report = evaluate_dirs(pred_dir, gt_dir)
        out = tmp_path / "report.json"
        report.save(out)
        import json

        loaded = json.loads(out.read_text())
        assert loaded["aggregate"]["sm"] == report.aggregate["sm"]
        assert len(loaded["per_image"]) == 2
