import json
import math

import numpy as np
import pytest

import oracles
from occset.core import LabeledPointSet, SceneConfig, StageSchedule
from occset.errors import (
    CountNotRepresentable,
    LengthMismatch,
    MissingLabels,
    ProbabilityOutOfRange,
    ScheduleViolation,
    ShapeMismatch,
)
from occset.losses import (
    ClassWeights,
    StagePrediction,
    focal_loss_reweighted,
    init_points,
    refine_points,
    total_loss,
)
from occset.matching import WeightFn


def one_hot(classes, n):
    s = np.zeros((len(classes), n))
    s[np.arange(len(classes)), classes] = 1.0
    return s


class TestFocal:
    def test_perfect_is_zero(self):
        assert focal_loss_reweighted(one_hot([0, 2, 1], 3), [0, 2, 1], ClassWeights.uniform(3)) == 0.0

    def test_half_probability_closed_form(self):
        val = focal_loss_reweighted([[0.5, 0.5]], [0], ClassWeights.uniform(2))
        assert val == pytest.approx(0.25 * math.log(2), abs=1e-15)
        assert val == pytest.approx(0.17328679513998632, abs=1e-12)

    def test_doubling_a_class_weight_doubles_its_share(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0.05, 0.95, (30, 4))
        t = rng.integers(0, 4, 30)
        base = ClassWeights((1.0, 1.0, 1.0, 1.0))
        twice = ClassWeights((1.0, 2.0, 1.0, 1.0))
        only = ClassWeights((1e-300, 1.0, 1e-300, 1e-300))
        share = focal_loss_reweighted(s, t, only)
        assert focal_loss_reweighted(s, t, twice) == pytest.approx(
            focal_loss_reweighted(s, t, base) + share, rel=1e-12)

    def test_gamma_zero_is_weighted_cross_entropy(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(0.05, 0.95, (20, 3))
        t = rng.integers(0, 3, 20)
        w = ClassWeights((0.5, 2.0, 1.5), gamma=0.0)
        ce = np.mean(w.array[t] * -np.log(s[np.arange(20), t]))
        assert focal_loss_reweighted(s, t, w) == pytest.approx(ce, rel=1e-14)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(0.01, 1.0, (50, 5))
        t = rng.integers(0, 5, 50)
        w = ClassWeights((1.0, 0.3, 2.0, 4.0, 1.0), gamma=1.5)
        assert focal_loss_reweighted(s, t, w) == pytest.approx(
            oracles.focal(s, t, w.weights, 1.5), rel=1e-13)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            focal_loss_reweighted(np.full((3, 2), 0.5), [0, 1], ClassWeights.uniform(2))

    def test_out_of_range(self):
        with pytest.raises(ProbabilityOutOfRange):
            focal_loss_reweighted([[1.2, 0.1]], [0], ClassWeights.uniform(2))

    def test_weights_json(self, tmp_path):
        path = tmp_path / "w.json"
        path.write_text(json.dumps({"gamma": 1.0, "weights": [1, 2, 3]}))
        w = ClassWeights.from_json(path)
        assert w.gamma == 1.0 and w.weights == (1.0, 2.0, 3.0)
        assert ClassWeights.from_json(w.to_json()) == w

    def test_non_positive_weight_rejected(self):
        with pytest.raises(ValueError):
            ClassWeights((1.0, 0.0))


class TestInitPoints:
    def test_grid_four_in_2m_square(self):
        cfg = SceneConfig(roi_min=(0, 0, 0), roi_max=(2, 2, 2), voxel_size=0.5)
        p = init_points("grid", cfg, 4).positions
        assert p.tolist() == [[0.5, 0.5, 1.0], [1.5, 0.5, 1.0], [0.5, 1.5, 1.0], [1.5, 1.5, 1.0]]

    def test_grid_needs_near_square_factorization(self):
        with pytest.raises(CountNotRepresentable):
            init_points("grid", SceneConfig(), 7)

    def test_random_is_seeded(self):
        cfg = SceneConfig(seed=5)
        a = init_points("random", cfg, 100)
        b = init_points("random", cfg, 100)
        assert a == b
        assert a != init_points("random", SceneConfig(seed=6), 100)

    def test_random_mean_near_center(self):
        cfg = SceneConfig()
        p = init_points("random", cfg, 10000).positions
        lo, hi = np.asarray(cfg.roi_min), np.asarray(cfg.roi_max)
        sigma = (hi - lo) / math.sqrt(12) / math.sqrt(10000)
        assert (np.abs(p.mean(0) - (lo + hi) / 2) < 3 * sigma).all()
        assert ((p >= lo) & (p <= hi)).all()


class TestRefine:
    def test_zero_offsets_copy_mean(self):
        prev = np.array([[[0, 0, 0], [2, 4, 6]]], float)
        out = refine_points(prev, np.zeros((1, 3, 3)))
        assert (out == [1, 2, 3]).all() and out.shape == (1, 3, 3)

    def test_contract_example(self):
        prev = np.array([[[0, 0, 0], [2, 0, 0]]], float)
        off = np.array([[[0, 1, 0], [0, -1, 0], [1, 0, 0]]], float)
        assert refine_points(prev, off).tolist() == [[[1, 1, 0], [1, -1, 0], [2, 0, 0]]]

    def test_shrinking_rejected(self):
        with pytest.raises(ScheduleViolation):
            refine_points(np.zeros((2, 4, 3)), np.zeros((2, 2, 3)))

    def test_six_stage_composition(self):
        sch = StageSchedule(5, (1, 1, 2, 4, 8, 16, 32))
        rng = np.random.default_rng(0)
        p = rng.normal(size=(5, 1, 3))
        for r in sch.points_per_stage[1:]:
            off = rng.normal(size=(5, r, 3))
            nxt = refine_points(p, off)
            assert np.allclose(nxt.mean(1), p.mean(1) + off.mean(1), atol=1e-12)
            p = nxt
        assert p.shape == (5, 32, 3)


def make_stages(rng, gt, q, rs, ncls, noise=0.3):
    stages = []
    for i, r in enumerate(rs):
        pos = gt.positions[rng.integers(0, len(gt), q * r)] + rng.normal(0, noise, (q * r, 3))
        scores = None if i == 0 else rng.uniform(0.02, 0.98, (q * r, ncls))
        stages.append(StagePrediction(i, pos.reshape(q, r, 3), scores))
    return stages


class TestTotalLoss:
    def test_perfect_prediction_is_zero(self):
        rng = np.random.default_rng(0)
        gt = LabeledPointSet(rng.uniform(0, 4, (12, 3)), rng.integers(0, 17, 12))
        stages = [StagePrediction(0, gt.positions.reshape(12, 1, 3))]
        for i in range(1, 7):
            stages.append(StagePrediction(i, gt.positions.reshape(12, 1, 3),
                                          one_hot(gt.classes, 17).reshape(12, 1, 17)))
        res = total_loss(stages, gt)
        assert res.total == 0.0
        assert len(res.terms) == 13

    def test_additivity_one_stage(self):
        rng = np.random.default_rng(1)
        gt = LabeledPointSet(rng.uniform(0, 4, (30, 3)), rng.integers(0, 17, 30))
        stages = make_stages(rng, gt, 6, (1, 2), 17)
        res = total_loss(stages, gt)
        c0 = oracles.chamfer(stages[0].flat_positions, gt.positions, 0.2)
        c1 = oracles.chamfer(stages[1].flat_positions, gt.positions, 0.2)
        idx, _ = oracles.nearest(stages[1].flat_positions, gt.positions, "l2")
        f1 = oracles.focal(stages[1].flat_scores, gt.classes[idx], [1.0] * 17)
        assert res.total == pytest.approx(c0 + c1 + f1, abs=1e-9)
        assert sum(v for _, v in res.terms) == res.total

    def test_thirteen_terms_match_recomputation(self):
        rng = np.random.default_rng(2)
        gt = LabeledPointSet(rng.uniform(0, 6, (120, 3)), rng.integers(0, 17, 120))
        sch = StageSchedule(8, (1, 1, 2, 4, 4, 8, 8))
        stages = make_stages(rng, gt, 8, sch.points_per_stage, 17)
        cw = ClassWeights(tuple(rng.uniform(0.5, 3.0, 17)), gamma=2.0)
        w = WeightFn(0.25, 4.0, 1.0)
        res = total_loss(stages, gt, w, cw, sch)
        expect = [oracles.chamfer(stages[0].flat_positions, gt.positions, 0.25, 4.0, 1.0)]
        for st in stages[1:]:
            expect.append(oracles.chamfer(st.flat_positions, gt.positions, 0.25, 4.0, 1.0))
            idx, _ = oracles.nearest(st.flat_positions, gt.positions, "l2")
            expect.append(oracles.focal(st.flat_scores, gt.classes[idx], cw.weights, 2.0))
        assert len(res.terms) == 13
        assert [v for _, v in res.terms] == pytest.approx(expect, abs=1e-9)
        assert res.total == pytest.approx(math.fsum(expect), abs=1e-9)
        assert res.total >= 0

    def test_schedule_mismatch(self):
        rng = np.random.default_rng(3)
        gt = LabeledPointSet(rng.uniform(0, 4, (20, 3)), rng.integers(0, 17, 20))
        stages = make_stages(rng, gt, 4, (1, 2), 17)
        with pytest.raises(ScheduleViolation):
            total_loss(stages, gt, schedule=StageSchedule(4, (1, 4)))

    def test_shrinking_stage_rejected(self):
        rng = np.random.default_rng(4)
        gt = LabeledPointSet(rng.uniform(0, 4, (20, 3)), rng.integers(0, 17, 20))
        stages = make_stages(rng, gt, 4, (2, 1), 17)
        with pytest.raises(ScheduleViolation):
            total_loss(stages, gt)

    def test_unlabeled_gt(self):
        with pytest.raises(MissingLabels):
            total_loss([StagePrediction(0, np.zeros((1, 1, 3)))], LabeledPointSet(np.zeros((1, 3))))

    def test_stage_zero_scores_rejected(self):
        with pytest.raises(ShapeMismatch):
            StagePrediction(0, np.zeros((1, 1, 3)), np.ones((1, 1, 2)))
