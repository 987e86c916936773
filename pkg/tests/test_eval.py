"""Boundary evaluation: NMS thinning, matching, curves, ODS/OIS/AP and crispness."""
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from cpdnet.evaluation import (
    THRESHOLDS,
    DegenerateCurveWarning,
    EdgeMap,
    EvalReport,
    GroundTruth,
    PrCurve,
    average_crispness,
    average_precision,
    compute_curve,
    corpus_crispness,
    evaluate,
    match_boundaries,
    nms_thin,
    ods_ois,
)
from cpdnet.evaluation.matching import EXACT_MAX_PIXELS, resolve_method, tolerance_radius


def hline(size=16, row=8, start=2, stop=14, value=0.8):
    m = np.zeros((size, size))
    m[row, start:stop] = value
    return m


def thick_bar(size=32, rows=(14, 15, 16), value=1.0, shoulder=None, start=0, stop=None):
    """Horizontal bar; by default it spans the full width so only its cross-section matters."""
    stop = size if stop is None else stop
    m = np.zeros((size, size))
    for r in rows:
        m[r, start:stop] = value
    if shoulder is not None:
        m[rows[0] - 1, start:stop] = shoulder
        m[rows[-1] + 1, start:stop] = shoulder
    return m


def digital_circle(size=32, radius=10):
    """Midpoint circle: an 8-connected ring with no redundant pixels."""
    m = np.zeros((size, size))
    c = size // 2
    x, y, d = radius, 0, 1 - radius
    while x >= y:
        for a, b in ((x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)):
            m[c + b, c + a] = 1.0
        y += 1
        if d < 0:
            d += 2 * y + 1
        else:
            x -= 1
            d += 2 * (y - x) + 1
    return m


def random_map(seed, size=24):
    r = np.random.default_rng(seed)
    return np.clip(ndimage.gaussian_filter(r.random((size, size)), 1.5) * 3 - 1, 0, 1)


class TestTypes:
    def test_edge_map_range(self):
        with pytest.raises(ValueError):
            EdgeMap(np.full((2, 2), 1.5))

    def test_ground_truth_binary(self):
        with pytest.raises(ValueError):
            GroundTruth([np.full((2, 2), 0.5)])

    def test_ground_truth_requires_annotation(self):
        with pytest.raises(ValueError):
            GroundTruth([])


class TestNmsThin:
    def test_zero_map(self):
        np.testing.assert_array_equal(nms_thin(np.zeros((10, 10))), 0)

    def test_thin_line_unchanged(self):
        m = hline()
        np.testing.assert_array_equal(nms_thin(m), m)

    def test_thick_bar_with_shoulders_keeps_centre(self):
        m = thick_bar(shoulder=0.5)
        want = np.zeros_like(m)
        want[15] = 1.0
        np.testing.assert_array_equal(nms_thin(m), want)

    def test_equal_plateau_keeps_one_row(self):
        out = nms_thin(thick_bar())
        rows = np.nonzero(out.any(axis=1))[0]
        assert list(rows) == [15]

    def test_vertical_and_diagonal(self):
        m = hline().T
        np.testing.assert_array_equal(nms_thin(m), m)
        d = np.eye(16) * 0.7
        np.testing.assert_array_equal(nms_thin(d), d)

    def test_edge_map_roundtrip(self):
        out = nms_thin(EdgeMap(hline(), "x"))
        assert isinstance(out, EdgeMap) and out.source_id == "x"

    def test_survivors_keep_values(self):
        m = random_map(3)
        out = nms_thin(m)
        kept = out > 0
        np.testing.assert_array_equal(out[kept], m[kept])

    def test_output_eight_thin(self):
        out = nms_thin(random_map(5, 40)) > 0
        # no 2x2 block of surviving pixels
        blocks = out[:-1, :-1] & out[1:, :-1] & out[:-1, 1:] & out[1:, 1:]
        assert not blocks.any()


@settings(max_examples=40, deadline=None)
@given(m=arrays(np.float64, (12, 12), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])))
def test_nms_idempotent_and_monotone(m):
    once = nms_thin(m)
    assert np.all(once <= m)
    np.testing.assert_array_equal(nms_thin(once), once)


class TestMatching:
    def test_identity(self):
        gt = hline() > 0
        r = match_boundaries(gt, GroundTruth([gt]))
        assert (r.tp, r.fp, r.fn) == (int(gt.sum()), 0, 0)

    def test_distance_one_matches(self):
        pred = np.zeros((100, 100), bool)
        gt = np.zeros((100, 100), bool)
        pred[50, 50] = True
        gt[50, 51] = True
        assert tolerance_radius((100, 100), 0.0075) == pytest.approx(1.0607, abs=1e-4)
        r = match_boundaries(pred, GroundTruth([gt]), 0.0075)
        assert (r.tp, r.fp, r.fn) == (1, 0, 0)

    def test_distance_two_misses(self):
        pred = np.zeros((100, 100), bool)
        gt = np.zeros((100, 100), bool)
        pred[50, 50] = True
        gt[50, 52] = True
        r = match_boundaries(pred, GroundTruth([gt]), 0.0075)
        assert (r.tp, r.fp, r.fn) == (0, 1, 1)

    def test_empty(self):
        z = np.zeros((8, 8), bool)
        r = match_boundaries(z, GroundTruth([z]))
        assert (r.tp, r.fp, r.fn, r.tp_gt) == (0, 0, 0, 0)

    def test_one_to_one(self):
        pred = np.zeros((100, 100), bool)
        gt = np.zeros((100, 100), bool)
        pred[50, 50] = pred[50, 51] = True
        gt[50, 50] = True
        r = match_boundaries(pred, GroundTruth([gt]), 0.0075)
        assert (r.tp, r.fp, r.tp_gt, r.fn) == (1, 1, 1, 0)

    def test_multi_annotation_tp_any_fn_pooled(self):
        a0 = np.zeros((100, 100), bool)
        a1 = np.zeros((100, 100), bool)
        a0[10, 10] = True
        a1[80, 80] = True
        pred = np.zeros((100, 100), bool)
        pred[10, 10] = True
        r = match_boundaries(pred, GroundTruth([a0, a1]), 0.0075)
        assert (r.tp, r.fp) == (1, 0)
        assert (r.tp_gt, r.fn) == (1, 1)

    def test_method_choice(self):
        assert resolve_method((64, 64)) == "exact"
        assert resolve_method((65, 64)) == "greedy"
        assert EXACT_MAX_PIXELS == 4096

    def test_greedy_agrees_with_exact(self, rng):
        for seed in range(5):
            pred = random_map(seed, 48) > 0.3
            gt = random_map(seed + 100, 48) > 0.3
            a = match_boundaries(pred, GroundTruth([gt]), 0.02, method="exact")
            b = match_boundaries(pred, GroundTruth([gt]), 0.02, method="greedy")
            assert abs(a.tp - b.tp) <= 1
            assert abs(a.tp_gt - b.tp_gt) <= 1

    def test_invalid_fraction(self):
        z = np.zeros((4, 4), bool)
        with pytest.raises(ValueError):
            match_boundaries(z, GroundTruth([z]), 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            match_boundaries(np.zeros((4, 4), bool), GroundTruth([np.zeros((5, 5), bool)]))


class TestCurve:
    def test_thresholds(self):
        np.testing.assert_allclose(THRESHOLDS, np.arange(1, 100) / 100)

    @pytest.mark.parametrize("mode", ("S", "C"))
    def test_perfect_thin(self, mode):
        m = hline(value=0.8)
        curve = compute_curve([m], [GroundTruth([m > 0])], mode)
        np.testing.assert_allclose(curve.f[THRESHOLDS <= 0.8], 1.0)

    def test_thick_lower_precision_than_thinned(self):
        thick = thick_bar()
        gt = GroundTruth([hline(32, 15, 4, 28) > 0])
        raw = compute_curve([thick], [gt], "C")
        thinned = compute_curve([nms_thin(thick)], [gt], "C")
        i = 49
        assert raw.precision[i] < thinned.precision[i]

    def test_duplicate_corpus(self):
        m = random_map(1, 20)
        gt = GroundTruth([random_map(2, 20) > 0.4])
        one = compute_curve([m], [gt], "S")
        two = compute_curve([m, m], [gt, gt], "S")
        np.testing.assert_allclose(one.precision, two.precision)
        np.testing.assert_allclose(one.recall, two.recall)
        assert ods_ois(one) == ods_ois(two)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            compute_curve([np.zeros((4, 4))], [])

    def test_mode_names(self):
        m = hline()
        gt = GroundTruth([m > 0])
        assert compute_curve([m], [gt], "s-eval").mode == "S"
        with pytest.raises(ValueError):
            compute_curve([m], [gt], "x")


class TestOdsOis:
    def test_single_image(self):
        c = PrCurve.from_image_scores([[0.2, 0.7, 0.4]])
        assert ods_ois(c) == (0.7, 0.7)

    def test_hand_case(self):
        c = PrCurve.from_image_scores([[0.8, 0.6], [0.5, 0.9]], thresholds=[0.3, 0.5])
        ods, ois = ods_ois(c)
        assert ods == pytest.approx(0.75)
        assert ois == pytest.approx(0.85)


@settings(max_examples=50, deadline=None)
@given(f=arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=st.floats(0, 1)))
def test_ois_at_least_ods(f):
    ods, ois = ods_ois(PrCurve.from_image_scores(f))
    assert ois >= ods - 1e-12


class TestAveragePrecision:
    def test_unit(self):
        assert average_precision(PrCurve.from_pr_points([0.0, 0.5, 1.0], [1.0, 1.0, 1.0])) == 1.0

    def test_triangle(self):
        assert average_precision(PrCurve.from_pr_points([0.0, 1.0], [1.0, 0.0])) == 0.5

    def test_three_points(self):
        r, p = [0.9, 0.1, 0.5], [0.3, 0.9, 0.6]
        pts = sorted(zip(r, p))
        want = sum((pts[i + 1][0] - pts[i][0]) * (pts[i + 1][1] + pts[i][1]) / 2 for i in range(2))
        assert average_precision(PrCurve.from_pr_points(r, p)) == pytest.approx(want, abs=1e-15)

    def test_degenerate(self):
        with pytest.warns(DegenerateCurveWarning):
            assert average_precision(PrCurve.from_pr_points([0.5, 0.5], [1.0, 0.2])) == 0.0


class TestCrispness:
    def test_thin_is_one(self):
        assert average_crispness(hline()) == 1.0
        assert average_crispness(digital_circle()) == 1.0

    def test_equal_bar_one_third(self):
        assert average_crispness(thick_bar()) == pytest.approx(1 / 3)

    def test_finite_bar_end_caps(self):
        # the end caps of a short bar keep a few corner pixels
        assert average_crispness(thick_bar(start=4, stop=28)) <= 0.40

    def test_zero_map_undefined(self):
        assert average_crispness(np.zeros((5, 5))) is None
        ac, skipped = corpus_crispness([np.zeros((5, 5)), hline()])
        assert (ac, skipped) == (1.0, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_in_unit_interval(self, seed):
        ac = average_crispness(random_map(seed))
        assert 0.0 <= ac <= 1.0


class TestReport:
    def test_roundtrip(self, tmp_path):
        m = hline()
        rep = evaluate([m], [GroundTruth([m > 0])], "S")
        assert rep.ods == 1.0 and rep.ois == 1.0
        path = tmp_path / "r.txt"
        rep.write(path)
        back = EvalReport.parse(path.read_text())
        assert back.ods == rep.ods and back.mode == "S"

    def test_s_at_least_c_on_thick(self):
        maps = [thick_bar(rows=(r, r + 1, r + 2)) for r in (8, 12, 16)]
        gts = [GroundTruth([hline(32, r + 1, 4, 28) > 0]) for r in (8, 12, 16)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCurveWarning)
            s = evaluate(maps, gts, "S")
            c = evaluate(maps, gts, "C")
        assert s.ods > c.ods
