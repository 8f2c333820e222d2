"""Tests for path traces, lengths, reparameterization and the m-norm."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxcert.core import (
    PathTrace,
    arc_length_reparameterize,
    as_complex_vector,
    check_piecewise_linear_family,
    count_affine_segments,
    norm_m,
    partition_length,
)


def line_trace(a, b, params, segments=1):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    ts = np.asarray(params, dtype=float)
    pts = np.array([(1 - t) * a + t * b for t in ts])
    return PathTrace(params=ts, points=pts, segments=segments)


def polyline_trace(vertices, params_per_vertex=None, segments=None):
    """Piecewise-linear trace through vertices at uniform parameter spacing."""
    verts = np.asarray(vertices, dtype=complex)
    n = len(verts)
    ts = np.linspace(0.0, 1.0, n) if params_per_vertex is None else np.asarray(params_per_vertex)
    segs = n - 1 if segments is None else segments
    return PathTrace(params=ts, points=verts, segments=segs)


class TestPathTraceValidation:
    def test_rejects_short(self):
        with pytest.raises(ValueError):
            PathTrace(params=np.array([0.0]), points=np.zeros((1, 2)))

    def test_rejects_bad_endpoints(self):
        with pytest.raises(ValueError):
            PathTrace(params=np.array([0.0, 0.5]), points=np.zeros((2, 2)))

    def test_rejects_non_increasing(self):
        with pytest.raises(ValueError):
            PathTrace(params=np.array([0.0, 0.7, 0.7, 1.0]), points=np.zeros((4, 1)))

    def test_rejects_nan(self):
        pts = np.zeros((2, 1), dtype=complex)
        pts[1, 0] = np.nan
        with pytest.raises(ValueError):
            PathTrace(params=np.array([0.0, 1.0]), points=pts)


class TestPartitionLength:
    def test_three_four_five_segment(self):
        tr = line_trace([0, 0], [3, 4], [0.0, 0.5, 1.0])
        assert partition_length(tr) == pytest.approx(5.0, abs=1e-12)

    def test_constant_path_zero_length(self):
        tr = polyline_trace([[1 + 1j], [1 + 1j], [1 + 1j]], segments=1)
        assert partition_length(tr) == 0.0

    def test_two_unit_segments(self):
        tr = polyline_trace([[0, 0], [1, 0], [1, 1]])
        assert partition_length(tr) == pytest.approx(2.0, abs=1e-12)

    def test_range_error(self):
        tr = line_trace([0], [1], [0.0, 1.0])
        with pytest.raises(ValueError):
            partition_length(tr, 0.5, 0.4)
        with pytest.raises(ValueError):
            partition_length(tr, -0.1, 1.0)

    def test_additive_split_at_sample(self):
        rng = np.random.default_rng(3)
        verts = rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3))
        tr = polyline_trace(verts)
        for mid in tr.params[1:-1]:
            total = partition_length(tr)
            split = partition_length(tr, 0.0, mid) + partition_length(tr, mid, 1.0)
            assert split == pytest.approx(total, rel=1e-12)

    def test_matches_declared_segment_lengths(self):
        rng = np.random.default_rng(11)
        verts = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
        tr = polyline_trace(verts)
        expected = sum(np.linalg.norm(verts[i + 1] - verts[i]) for i in range(4))
        assert partition_length(tr) == pytest.approx(expected, rel=1e-10)


class TestArcLengthReparameterize:
    def test_joint_lands_at_half(self):
        # two unit segments, joint originally at t = 3/4
        tr = polyline_trace([[0, 0], [1, 0], [1, 1]], params_per_vertex=[0.0, 0.75, 1.0])
        rep = arc_length_reparameterize(tr)
        np.testing.assert_allclose(rep.evaluate(0.5), [1, 0], atol=1e-12)

    def test_constant_path_unchanged(self):
        tr = polyline_trace([[2 + 1j], [2 + 1j]], segments=1)
        rep = arc_length_reparameterize(tr)
        assert rep is tr

    def test_unit_segment_equal_spacing(self):
        tr = line_trace([0], [1], [0.0, 0.25, 1.0])
        rep = arc_length_reparameterize(tr)
        np.testing.assert_allclose(rep.params, [0.0, 0.25, 1.0])
        # param now equals normalized arc length at every sample
        np.testing.assert_allclose(rep.params, [abs(p[0]) for p in rep.points], atol=1e-12)
        assert partition_length(rep) == pytest.approx(1.0, abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            verts = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
            ts = np.sort(rng.uniform(0.05, 0.95, size=3))
            tr = polyline_trace(verts, params_per_vertex=[0.0, *ts, 1.0])
            once = arc_length_reparameterize(tr)
            twice = arc_length_reparameterize(once)
            np.testing.assert_allclose(twice.params, once.params, atol=1e-12)
            np.testing.assert_allclose(twice.points, once.points, atol=1e-12)

    def test_length_preserved(self):
        rng = np.random.default_rng(13)
        verts = rng.normal(size=(7, 4)) + 1j * rng.normal(size=(7, 4))
        tr = polyline_trace(verts)
        rep = arc_length_reparameterize(tr)
        assert partition_length(rep) == pytest.approx(partition_length(tr), rel=1e-12)


class TestNormM:
    def test_single_complex(self):
        assert norm_m([3 + 4j]) == pytest.approx(7.0)

    def test_zero_vector(self):
        assert norm_m(np.zeros(5, dtype=complex)) == 0.0

    def test_mixed_entries(self):
        assert norm_m([1 - 1j, -2]) == pytest.approx(4.0)

    def test_axioms_on_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            d = rng.integers(1, 8)
            x = rng.normal(size=d) + 1j * rng.normal(size=d)
            y = rng.normal(size=d) + 1j * rng.normal(size=d)
            alpha = rng.normal()
            assert norm_m(alpha * x) == pytest.approx(abs(alpha) * norm_m(x), abs=1e-12, rel=1e-12)
            assert norm_m(x + y) <= norm_m(x) + norm_m(y) + 1e-12
            assert norm_m(x) >= 0.0

    @given(
        st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False),
                 min_size=1, max_size=6),
        st.floats(min_value=-100, max_value=100),
    )
    @settings(max_examples=200, deadline=None)
    def test_homogeneity_hypothesis(self, entries, alpha):
        x = np.array(entries)
        assert norm_m(alpha * x) == pytest.approx(abs(alpha) * norm_m(x), rel=1e-9, abs=1e-9)


class TestPiecewiseLinearFamily:
    def test_single_straight_segment(self):
        tr = line_trace([0, 0], [1, 2], np.linspace(0, 1, 11))
        rep = check_piecewise_linear_family([tr], max_segments=1)
        assert rep.passed
        assert rep.worst_deviation <= 1e-12

    def test_curved_trace_fails_with_witness(self):
        ts = np.linspace(0, 1, 21)
        pts = np.stack([ts, ts**2], axis=1).astype(complex)
        tr = PathTrace(params=ts, points=pts, segments=1)
        rep = check_piecewise_linear_family([tr], max_segments=1)
        assert not rep.passed
        assert "affine runs" in rep.note

    def test_empty_family_vacuous(self):
        rep = check_piecewise_linear_family([], max_segments=3)
        assert rep.passed
        assert "vacuous" in rep.note

    def test_sampled_only_trace_rejected(self):
        tr = line_trace([0], [1], [0.0, 1.0], segments=0)
        rep = check_piecewise_linear_family([tr], max_segments=2)
        assert not rep.passed

    def test_segment_budget_enforced(self):
        tr = polyline_trace([[0, 0], [1, 0], [1, 1]])
        assert check_piecewise_linear_family([tr], max_segments=2).passed
        assert not check_piecewise_linear_family([tr], max_segments=1).passed

    def test_dimension_mismatch(self):
        t1 = line_trace([0], [1], [0.0, 1.0])
        t2 = line_trace([0, 0], [1, 1], [0.0, 1.0])
        with pytest.raises(ValueError):
            check_piecewise_linear_family([t1, t2], max_segments=1)

    def test_bounding_box_reported(self):
        t1 = line_trace([0, 0], [1, 2], np.linspace(0, 1, 5))
        t2 = line_trace([-1, 1], [0, 3], np.linspace(0, 1, 5))
        rep = check_piecewise_linear_family([t1, t2], max_segments=1)
        lo, hi = rep.bounding_box
        np.testing.assert_allclose(lo.real, [-1, 0])
        np.testing.assert_allclose(hi.real, [1, 3])


class TestAffineSegmentCount:
    def test_counts_polyline_pieces(self):
        rng = np.random.default_rng(5)
        verts = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        dense_params = []
        dense_points = []
        base = np.linspace(0, 1, 4)
        for i in range(3):
            local = np.linspace(base[i], base[i + 1], 21)[: None if i == 2 else -1]
            for t in local:
                w = (t - base[i]) / (base[i + 1] - base[i])
                dense_params.append(t)
                dense_points.append((1 - w) * verts[i] + w * verts[i + 1])
        tr = PathTrace(params=np.array(dense_params), points=np.array(dense_points), segments=3)
        count, dev = count_affine_segments(tr)
        assert count == 3
        assert dev <= 1e-12


def test_as_complex_vector_rejects_inf():
    with pytest.raises(ValueError):
        as_complex_vector([1.0, np.inf])
    with pytest.raises(ValueError):
        as_complex_vector([[1.0, 2.0]])
