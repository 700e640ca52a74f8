import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from occset.core import LabeledPointSet, VoxelGrid
from occset.matching import (
    L1,
    L2,
    WeightFn,
    build_nn_index,
    chamfer_distance,
    chamfer_distance_reweighted,
    hungarian_match,
)
from occset.synthio import ops_bytes, ovg_bytes, parse_grid, parse_ops

SETTINGS = settings(max_examples=60, deadline=None,
                    suppress_health_check=[HealthCheck.too_slow])

coord = st.floats(-50, 50, allow_nan=False, width=32)


def point_sets(min_size=1, max_size=40):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(np.float64, (n, 3), elements=coord))


class TestChamferProperties:
    @SETTINGS
    @given(point_sets(), point_sets())
    def test_symmetric_and_non_negative(self, a, b):
        ab, _ = chamfer_distance(a, b)
        ba, _ = chamfer_distance(b, a)
        assert ab >= 0 and ab == ba

    @SETTINGS
    @given(point_sets(), point_sets())
    def test_matches_brute_force(self, a, b):
        assert abs(chamfer_distance(a, b)[0] - oracles.chamfer(a, b)) <= 1e-9

    @SETTINGS
    @given(point_sets())
    def test_zero_on_identical_sets(self, a):
        assert chamfer_distance(a, a)[0] == 0.0

    @SETTINGS
    @given(point_sets(), point_sets(), st.floats(0.01, 5), st.floats(1, 10))
    def test_reweighting_bounds(self, a, b, thr, high):
        cd, _ = chamfer_distance(a, b)
        cdr, _ = chamfer_distance_reweighted(a, b, WeightFn(thr, high, 1.0))
        assert cd - 1e-9 <= cdr <= high * cd + 1e-9


class TestNnIndexProperties:
    @SETTINGS
    @given(point_sets(), point_sets(), st.sampled_from([L1, L2]),
           st.one_of(st.none(), st.floats(0.05, 20)))
    def test_matches_brute_force(self, queries, points, metric, cell):
        idx, dist = build_nn_index(points, cell).query(queries, metric)
        want_idx, want_d = oracles.nearest(queries, points, "l1" if metric == L1 else "l2")
        assert np.array_equal(idx, want_idx)
        assert np.allclose(dist, want_d, rtol=0, atol=1e-12)


class TestHungarianProperties:
    @SETTINGS
    @given(st.integers(1, 6), st.integers(1, 6), st.data())
    def test_matches_permutations(self, m, n, data):
        cost = data.draw(arrays(np.float64, (m, n), elements=st.floats(-100, 100, width=32)))
        res = hungarian_match(cost)
        assert res.total_cost == oracles.best_assignment(cost)
        assert len(res) == min(m, n)
        assert len(set(res.rows.tolist())) == len(set(res.cols.tolist())) == min(m, n)


class TestRoundTrips:
    @SETTINGS
    @given(point_sets(0, 30), st.booleans(), st.data())
    def test_ops(self, pos, labeled, data):
        cls = data.draw(arrays(np.int64, len(pos), elements=st.integers(0, 16))) if labeled else None
        s = LabeledPointSet(pos, cls)
        raw = ops_bytes(s)
        back = parse_ops(raw)
        assert back == s and ops_bytes(back) == raw

    @SETTINGS
    @given(st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)), st.data(),
           st.floats(0.0625, 2.0, width=32), st.tuples(coord, coord, coord))
    def test_ovg(self, dims, data, vs, origin):
        labels = data.draw(arrays(np.uint16, dims, elements=st.integers(0, 17)))
        g = VoxelGrid(origin, vs, labels)
        raw = ovg_bytes(g)
        back = parse_grid(raw)
        assert np.array_equal(back.labels, labels) and ovg_bytes(back) == raw
