from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsscore.metrics import ConfusionCounts, MetricError, auc, binary_metrics, pcc


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    won = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0) for p in pos for n in neg)
    return won / (len(pos) * len(neg))


class TestBinaryMetrics:
    def test_perfect(self):
        m = binary_metrics(ConfusionCounts(5, 5, 0, 0))
        assert (m.accuracy, m.sensitivity, m.specificity) == (1.0, 1.0, 1.0)

    def test_worked_example(self):
        m = binary_metrics(ConfusionCounts(tp=3, tn=2, fp=1, fn=2))
        assert m.accuracy == 0.625 and m.sensitivity == 0.6
        assert m.specificity == pytest.approx(2 / 3, abs=1e-15)

    def test_undefined_sensitivity(self):
        m = binary_metrics(ConfusionCounts(0, 4, 1, 0))
        assert m.sensitivity is None and m.undefined == ("sensitivity",)

    def test_all_zero(self):
        with pytest.raises(MetricError):
            binary_metrics(ConfusionCounts(0, 0, 0, 0))

    def test_negative(self):
        with pytest.raises(MetricError):
            ConfusionCounts(-1, 0, 0, 0)

    def test_from_predictions(self):
        c = ConfusionCounts.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)


class TestAUC:
    @pytest.mark.parametrize("scores,labels,expected", [
        ([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0], 1.0),
        ([0.9, 0.2, 0.8, 0.3], [1, 0, 0, 1], 0.75),
        ([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0], 0.5),
    ])
    def test_examples(self, scores, labels, expected):
        assert auc(scores, labels) == expected

    def test_matches_pair_count(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 8, n) / 4.0
            assert auc(scores, labels) == float(pair_count_auc(scores, labels))

    def test_one_class(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1])


class TestPCC:
    def test_linear(self):
        x = np.arange(10.0)
        assert pcc(x, 2 * x) == pytest.approx(1.0)
        assert pcc(x, -3 * x + 1) == pytest.approx(-1.0)

    def test_worked_example(self):
        assert pcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    @pytest.mark.parametrize("x,y", [([1, 1, 1], [1, 2, 3]), ([1], [2]), ([1, 2], [1, 2, 3])])
    def test_errors(self, x, y):
        with pytest.raises(MetricError):
            pcc(x, y)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(-100, 100), st.integers(-100, 100)), min_size=3, max_size=30))
    def test_bounded_and_symmetric(self, points):
        x, y = map(np.array, zip(*points))
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return
        r = pcc(x, y)
        assert -1 - 1e-12 <= r <= 1 + 1e-12
        assert r == pytest.approx(pcc(y, x))
