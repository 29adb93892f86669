"""Score-to-reward transforms (base-10 sigmoid and double sigmoid).

All powers of ten are evaluated through clamped exponents so that inputs
such as ``10 ** (500 * 500 / 250)`` saturate instead of overflowing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXPONENT_CAP = 300.0


@dataclass(frozen=True)
class SigmoidTransform:
    a: float
    b: float
    k: float = 0.25

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("sigmoid transform needs a != b")
        if self.k <= 0:
            raise ValueError("steepness k must be positive")


@dataclass(frozen=True)
class DoubleSigmoidTransform:
    a: float = 0.0
    b: float = 500.0
    c_se: float = 500.0
    c_si: float = 500.0
    c_div: float = 250.0

    def __post_init__(self):
        if self.c_div == 0:
            raise ValueError("c_div must be non-zero")
        if not self.a < self.b:
            raise ValueError("double sigmoid needs a < b")


# reward settings used with the de novo design runs
DOCKING = SigmoidTransform(a=-1.0, b=-13.0, k=0.25)
FSSCORE = SigmoidTransform(a=-13.08, b=10.07, k=0.25)
SA_SCORE = SigmoidTransform(a=10.0, b=1.0, k=0.25)
MOLECULAR_WEIGHT = DoubleSigmoidTransform()


def _inv_one_plus_pow10(exponent):
    e = np.clip(exponent, -EXPONENT_CAP, EXPONENT_CAP)
    return 1.0 / (1.0 + np.power(10.0, e))


def sigmoid_reward(x, t: SigmoidTransform):
    """1 / (1 + 10^(10k (x - (a+b)/2) / (a-b))); scalar in, scalar out."""
    x = np.asarray(x, dtype=np.float64)
    out = _inv_one_plus_pow10(10.0 * t.k * (x - (t.a + t.b) / 2.0) / (t.a - t.b))
    return float(out) if out.ndim == 0 else out


def _rising(x, threshold: float, c: float, c_div: float):
    # 10^(c x/d) / (10^(c x/d) + 10^(c t/d)) == 1 / (1 + 10^(c (t - x)/d))
    return _inv_one_plus_pow10(c * (threshold - x) / c_div)


def double_sigmoid_reward(x, t: DoubleSigmoidTransform = MOLECULAR_WEIGHT):
    """Close to 1 inside (a, b), close to 0 outside; 1/2 at either edge."""
    x = np.asarray(x, dtype=np.float64)
    out = _rising(x, t.a, t.c_si, t.c_div) - _rising(x, t.b, t.c_se, t.c_div)
    return float(out) if out.ndim == 0 else out
