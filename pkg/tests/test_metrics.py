import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fpdm.metrics import (
    EvalReport,
    SetupScores,
    UndefinedMetricError,
    accuracy,
    auprc,
    dice,
    iou,
    pearson,
    setup_scores,
)


def brute_auprc(scores, truth):
    """Enumerate every distinct threshold, then integrate the PR points with trapezoids."""
    scores, truth = np.asarray(scores, float), np.asarray(truth, bool)
    pts = []
    for v in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= v
        tp = int((pred & truth).sum())
        pts.append((tp / truth.sum(), tp / pred.sum()))
    pts = [(0.0, pts[0][1])] + pts
    return sum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(pts, pts[1:]))


def block(shape, sl):
    m = np.zeros(shape, dtype=bool)
    m[sl] = True
    return m


class TestOverlap:
    def test_dice_examples(self):
        a = block((4, 4), np.s_[:2, :2])
        assert dice(a, a) == 1.0
        assert dice(a, block((4, 4), np.s_[2:, 2:])) == 0.0
        assert dice(a, block((4, 4), np.s_[1:3, :2])) == 0.5
        assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_iou_examples(self):
        a = block((4, 4), np.s_[:2, :2])
        assert iou(a, a) == 1.0
        assert iou(a, block((4, 4), np.s_[2:, 2:])) == 0.0
        assert iou(a, block((4, 4), np.s_[1:3, :2])) == pytest.approx(1 / 3)
        assert iou(np.zeros(5), np.zeros(5)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            iou(np.zeros(3), np.zeros(4))

    @given(arrays(bool, (5, 5)), arrays(bool, (5, 5)))
    def test_dice_dominates_iou(self, a, b):
        d, j = dice(a, b), iou(a, b)
        assert d >= j - 1e-15
        assert 0.0 <= j <= d <= 1.0


class TestAuprc:
    def test_perfect_ranking(self):
        y = np.array([1, 0, 0, 1, 0, 1], dtype=bool)
        assert auprc([y.astype(float)], [y]) == 1.0

    def test_constant_scores(self):
        y = np.array([1, 0, 0, 1, 0, 0, 0, 0], dtype=bool)
        assert auprc([np.full(8, 0.3)], [y]) == pytest.approx(0.25)

    def test_worst_ranking_ten_pixels(self):
        y = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0], dtype=bool)
        s = 1.0 - y
        expect = brute_auprc(s, y)
        assert expect == pytest.approx(0.15)
        assert auprc([s], [y]) == pytest.approx(expect, abs=1e-15)

    def test_foreground_restricts_pool(self):
        s = np.array([[0.9, 0.1], [0.8, 0.2]])
        y = np.array([[0, 1], [0, 0]], dtype=bool)
        fg = np.array([[False, True], [False, True]])
        assert auprc([s], [y], [fg]) == 0.25  # pool {0.1: pos, 0.2: neg}; points (0, 0) (0, 0) (1, 0.5)
        assert auprc([s], [y], [fg]) == pytest.approx(brute_auprc(s[fg], y[fg]))

    def test_no_positives(self):
        with pytest.raises(UndefinedMetricError):
            auprc([np.ones(3)], [np.zeros(3, dtype=bool)])

    @given(arrays(float, 12, elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
           arrays(bool, 12), st.integers(1, 20))
    def test_matches_brute_force(self, s, y, n):
        n = min(n, 12)
        s, y = s[:n], y[:n]
        if not y.any():
            return
        assert auprc([s], [y]) == pytest.approx(brute_auprc(s, y), abs=1e-12)

    def test_pooled_across_samples(self):
        rng = np.random.default_rng(0)
        ss = [rng.random((3, 3)) for _ in range(2)]
        ys = [rng.random((3, 3)) < 0.4 for _ in range(2)]
        pooled = brute_auprc(np.concatenate([x.ravel() for x in ss]), np.concatenate([x.ravel() for x in ys]))
        assert auprc(ss, ys) == pytest.approx(pooled, abs=1e-12)


class TestScalars:
    def test_pearson(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)
        with pytest.raises(UndefinedMetricError):
            pearson(x, np.ones(10))
        with pytest.raises(ValueError):
            pearson([1.0], [2.0])

    def test_accuracy(self):
        assert accuracy(["healthy", "unhealthy"], ["healthy", "healthy"]) == 0.5
        with pytest.raises(ValueError):
            accuracy([], [])


class TestReport:
    def test_setup_scores(self):
        t = block((4, 4), np.s_[:2, :2])
        sc = setup_scores([t, np.zeros((4, 4), bool)], [t, np.zeros((4, 4), bool)],
                          [t.astype(float), np.zeros((4, 4))], [np.ones((4, 4), bool)] * 2)
        assert (sc.dice, sc.iou, sc.n) == (1.0, 1.0, 2)
        assert sc.auprc == 1.0
        assert setup_scores([], [], [], []).n == 0

    def test_write(self, tmp_path):
        rep = EvalReport(SetupScores(0.5, 0.4, 0.3, 10), SetupScores(0.6, 0.5, 0.4, 5), 0.9, 0.35, 10, 5)
        rep.write(tmp_path / "r.json", tmp_path / "r.csv")
        rows = (tmp_path / "r.csv").read_text().splitlines()
        assert rows[0] == "setup,dice,iou,auprc,n"
        assert rows[1] == "mixed,0.5,0.4,0.3,10"
        assert '"accuracy": 0.9' in (tmp_path / "r.json").read_text()
