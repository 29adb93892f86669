from decimal import Decimal, getcontext

import numpy as np
import pytest

from fsscore.reward import (DOCKING, FSSCORE, MOLECULAR_WEIGHT, SA_SCORE, DoubleSigmoidTransform, SigmoidTransform,
                            double_sigmoid_reward, sigmoid_reward)

getcontext().prec = 60


def sigma10(x, t, c, c_div):
    """Literal 10^(cx/d) / (10^(cx/d) + 10^(ct/d)) in high-precision decimals."""
    x, t, c, d = map(Decimal, (x, t, c, c_div))
    up = Decimal(10) ** (c * x / d)
    return up / (up + Decimal(10) ** (c * t / d))


def double_oracle(x, t=MOLECULAR_WEIGHT):
    return float(sigma10(x, t.a, t.c_si, t.c_div) - sigma10(x, t.b, t.c_se, t.c_div))


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid_reward(-7.0, DOCKING) == 0.5
        assert sigmoid_reward((FSSCORE.a + FSSCORE.b) / 2, FSSCORE) == 0.5

    def test_docking_example(self):
        assert sigmoid_reward(-13.0, DOCKING) == pytest.approx(0.9467, abs=1e-3)
        assert sigmoid_reward(-13.0, DOCKING) == pytest.approx(1 / (1 + 10 ** -1.25), abs=1e-12)

    def test_direction(self):
        # lower docking scores are better; lower SA scores are better
        assert sigmoid_reward(-12.0, DOCKING) > sigmoid_reward(-2.0, DOCKING)
        assert sigmoid_reward(2.0, SA_SCORE) > sigmoid_reward(8.0, SA_SCORE)
        assert sigmoid_reward(5.0, FSSCORE) > sigmoid_reward(-5.0, FSSCORE)

    def test_vector_input(self):
        out = sigmoid_reward(np.array([-13.0, -7.0, -1.0]), DOCKING)
        assert out.shape == (3,) and out[1] == 0.5

    @pytest.mark.parametrize("kw", [dict(a=1.0, b=1.0), dict(a=0.0, b=1.0, k=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SigmoidTransform(**kw)


class TestDoubleSigmoid:
    def test_inside(self):
        assert double_sigmoid_reward(250.0) >= 1 - 1e-12

    def test_edges(self):
        assert double_sigmoid_reward(0.0) == pytest.approx(0.5, abs=1e-12)
        assert double_sigmoid_reward(500.0) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("x", [600.0, -100.0])
    def test_outside(self, x):
        assert double_sigmoid_reward(x) <= 1e-9

    @pytest.mark.parametrize("x", [-3.0, -0.5, 0.0, 0.2, 1.0, 50.0, 250.0, 499.0, 500.0, 500.4, 502.0, 800.0])
    def test_matches_decimal_oracle(self, x):
        assert double_sigmoid_reward(x) == pytest.approx(double_oracle(x), abs=1e-12)

    def test_custom_window(self):
        t = DoubleSigmoidTransform(a=200.0, b=400.0, c_se=20.0, c_si=20.0, c_div=100.0)
        for x in (150.0, 200.0, 300.0, 420.0):
            assert double_sigmoid_reward(x, t) == pytest.approx(double_oracle(x, t), abs=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            DoubleSigmoidTransform(c_div=0.0)
        with pytest.raises(ValueError):
            DoubleSigmoidTransform(a=5.0, b=1.0)


def test_extreme_inputs_stay_finite():
    xs = np.concatenate([-np.logspace(-3, 9, 200), [0.0], np.logspace(-3, 9, 200)])
    for t in (DOCKING, FSSCORE, SA_SCORE):
        out = sigmoid_reward(xs, t)
        assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))
    out = double_sigmoid_reward(xs)
    assert np.all(np.isfinite(out)) and np.all((out >= -1e-12) & (out <= 1))
