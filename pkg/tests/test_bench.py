import csv
import json

import numpy as np
import pytest

from occset.bench import (
    BenchRecord,
    ScalingFit,
    emit_report,
    fit_scaling_exponents,
    load_report,
    make_instance,
    run_matching_bench,
    speed_ratio,
)
from occset.core import LabeledPointSet
from occset.errors import InsufficientData
from occset.matching import assign_labels, hungarian_match, pairwise_cost


def power_records(method, alpha, sizes=(100, 200, 400, 800), scale=1e-4):
    return [BenchRecord(method, n, scale * n ** alpha, 0, 5, 0) for n in sizes]


class TestFit:
    def test_cubic(self):
        (f,) = fit_scaling_exponents(power_records("hungarian", 3))
        assert f.exponent == pytest.approx(3.0, abs=1e-6)
        assert f.r2 == pytest.approx(1.0, abs=1e-12)

    def test_quadratic(self):
        (f,) = fit_scaling_exponents(power_records("chamfer", 2))
        assert f.exponent == pytest.approx(2.0, abs=1e-6)

    def test_two_methods_separately(self):
        fits = fit_scaling_exponents(power_records("hungarian", 3) + power_records("chamfer", 1))
        assert {f.method: round(f.exponent, 6) for f in fits} == {"hungarian": 3.0, "chamfer": 1.0}

    def test_too_few_sizes(self):
        with pytest.raises(InsufficientData):
            fit_scaling_exponents(power_records("chamfer", 2, (100, 1000)))

    def test_span_too_narrow(self):
        with pytest.raises(InsufficientData):
            fit_scaling_exponents(power_records("chamfer", 2, (100, 200, 400)))

    def test_skip_insufficient(self):
        recs = power_records("chamfer", 2, (100, 1000)) + power_records("hungarian", 3)
        assert [f.method for f in fit_scaling_exponents(recs, skip_insufficient=True)] == ["hungarian"]

    def test_skipped_records_ignored(self):
        recs = power_records("hungarian", 3) + [BenchRecord("hungarian", 99999, None, None, 5, 0,
                                                            skipped=True)]
        (f,) = fit_scaling_exponents(recs)
        assert f.sizes == [100, 200, 400, 800]


class TestReport:
    def records(self):
        return power_records("hungarian", 3) + power_records("chamfer", 1)

    def test_csv_rows(self, tmp_path):
        out = emit_report(self.records(), [], tmp_path / "r.json")
        with open(out["csv"]) as f:
            rows = list(csv.reader(f))
        assert len(rows) == 9 and rows[0][:3] == ["method", "n_points", "wall_time_ms"]

    def test_empty_fits_still_plot(self, tmp_path):
        out = emit_report(self.records(), [], tmp_path / "r.json")
        assert open(out["svg"]).read().lstrip().startswith("<?xml")

    def test_json_round_trip(self, tmp_path):
        recs = self.records() + [BenchRecord("hungarian", 5000, None, None, 5, 0, skipped=True)]
        fits = fit_scaling_exponents(recs)
        out = emit_report(recs, fits, tmp_path / "sub" / "r.json")
        assert load_report(out["json"]) == recs
        doc = json.loads(open(out["json"]).read())
        assert set(doc) == {"records", "fits", "host"}
        assert {"cpu", "threads"} <= set(doc["host"])
        assert [ScalingFit(**f) for f in doc["fits"]] == fits

    def test_unavailable_memory(self, tmp_path):
        recs = [BenchRecord("chamfer", 10, 1.0, None, 5, 0)]
        out = emit_report(recs, [], tmp_path / "r.json")
        assert json.loads(open(out["json"]).read())["records"][0]["peak_extra_memory"] == "unavailable"
        assert load_report(out["json"]) == recs

    def test_svg_is_byte_stable(self, tmp_path):
        recs = self.records()
        fits = fit_scaling_exponents(recs)
        a = emit_report(recs, fits, tmp_path / "a.json")
        b = emit_report(recs, fits, tmp_path / "b.json")
        assert open(a["svg"], "rb").read() == open(b["svg"], "rb").read()

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], [], tmp_path / "r.json")


class TestRun:
    def test_small_sizes(self):
        recs = run_matching_bench((10, 40, 80), repeats=5)
        assert [(r.method, r.n_points) for r in recs] == [
            (m, n) for n in (10, 40, 80) for m in ("hungarian", "chamfer")]
        assert all(r.wall_time_ms >= 0 and r.repeats == 5 for r in recs)
        assert all(r.peak_extra_memory > 0 for r in recs)
        h = [r for r in recs if r.method == "hungarian"]
        assert all(r.setup_ms is not None for r in h)

    def test_tiny_sizes_are_sub_millisecond(self):
        recs = run_matching_bench((10,), repeats=9)
        assert all(r.wall_time_ms < 1.0 for r in recs)
        assert speed_ratio(recs, 10) is not None

    def test_single_point(self):
        recs = run_matching_bench((1,), repeats=5)
        assert len(recs) == 2
        pred, gt = make_instance(1, 0)
        assert hungarian_match(pairwise_cost(pred, gt)).cols.tolist() == [0]
        assert assign_labels(pred, gt).tolist() == gt.classes.tolist()

    def test_cutoff_skips_hungarian(self):
        recs = run_matching_bench((10, 50), repeats=5, hungarian_cutoff=20)
        skipped = [r for r in recs if r.skipped]
        assert [(r.method, r.n_points) for r in skipped] == [("hungarian", 50)]
        assert skipped[0].wall_time_ms is None

    @pytest.mark.parametrize("kw", [dict(sizes=(100, 10)), dict(sizes=(0,)),
                                    dict(sizes=(10,), repeats=3),
                                    dict(sizes=(10,), methods=("sinkhorn",))])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            run_matching_bench(**kw)

    def test_instances_are_deterministic(self):
        a, b = make_instance(300, 4)
        c, d = make_instance(300, 4)
        assert a == c and b == d
        assert make_instance(300, 5)[0] != a


class TestAgreement:
    def test_hungarian_and_nn_labels_agree_on_clustered_scene(self):
        rng = np.random.default_rng(0)
        gt = LabeledPointSet(rng.uniform(-40, 40, (400, 3)), rng.integers(0, 17, 400))
        perm = rng.permutation(400)
        pred = gt.positions[perm] + rng.normal(0, 1e-3, (400, 3))
        a = hungarian_match(pairwise_cost(pred, gt.positions))
        hung = np.empty(400, np.int64)
        hung[a.rows] = gt.classes[a.cols]
        assert np.array_equal(a.cols[np.argsort(a.rows)], perm)
        assert np.array_equal(assign_labels(pred, gt), hung)
