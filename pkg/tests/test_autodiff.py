import numpy as np
import pytest

from fsscore import autodiff as ad
from fsscore.autodiff import AdamState, DropoutRNG, Tape, Tensor, adam_step, gradients, no_tape


def param(rng, *shape, positive=False):
    data = rng.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True, dtype=np.float64)


def numeric_grad(f, p, eps=1e-6):
    g = np.zeros_like(p.data)
    it = np.nditer(p.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = p.data[idx]
        p.data[idx] = old + eps
        hi = f().item()
        p.data[idx] = old - eps
        lo = f().item()
        p.data[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def check(build, params):
    """Compare tape gradients of ``sum(w * build())`` with central differences."""
    rng = np.random.default_rng(123)
    with no_tape():
        shape = build().shape
    w = Tensor(rng.normal(size=shape), dtype=np.float64)

    def f():
        return ad.total(ad.mul(build(), w))

    with Tape() as tape:
        loss = f()
    analytic = gradients(loss, params, tape)
    with no_tape():
        for p, g in zip(params, analytic):
            np.testing.assert_allclose(g, numeric_grad(f, p), rtol=1e-5, atol=1e-7)


SEG = np.array([0, 0, 1, 2, 2, 2])


class TestPrimitiveGradients:
    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_matmul(self):
        a, b = param(self.rng, 3, 4), param(self.rng, 4, 2)
        check(lambda: ad.matmul(a, b), [a, b])

    @pytest.mark.parametrize("op", ["add", "sub", "mul"])
    def test_elementwise(self, op):
        a, b = param(self.rng, 3, 4), param(self.rng, 3, 4)
        check(lambda: getattr(ad, op)(a, b), [a, b])

    def test_bias_and_scale(self):
        x, b = param(self.rng, 5, 3), param(self.rng, 3)
        check(lambda: ad.scale(ad.add_bias(x, b), -1.5), [x, b])

    def test_concat_and_gather(self):
        a, b = param(self.rng, 4, 2), param(self.rng, 4, 3)
        idx = np.array([3, 0, 0, 2])
        check(lambda: ad.gather_rows(ad.concat([a, b], axis=1), idx), [a, b])

    @pytest.mark.parametrize("fn", ["relu", "leaky_relu", "elu", "sigmoid", "softplus", "exp", "square"])
    def test_unary(self, fn):
        x = param(self.rng, 4, 3)
        check(lambda: getattr(ad, fn)(x), [x])

    def test_log(self):
        x = param(self.rng, 3, 3, positive=True)
        check(lambda: ad.log(x), [x])

    def test_prelu(self):
        x, s = param(self.rng, 4, 3), param(self.rng, 1)
        check(lambda: ad.prelu(x, s), [x, s])

    def test_mean(self):
        x = param(self.rng, 4, 3)
        check(lambda: ad.mean(x), [x])

    @pytest.mark.parametrize("fn", ["segment_sum", "segment_max", "segment_softmax"])
    def test_segments(self, fn):
        x = param(self.rng, 6, 3)
        check(lambda: getattr(ad, fn)(x, SEG, 3), [x])

    def test_heads(self):
        x, a = param(self.rng, 5, 6), param(self.rng, 6)
        w = param(self.rng, 5, 2)
        check(lambda: ad.head_scale(x, ad.add(ad.head_dot(x, a, 2), w)), [x, a, w])

    def test_shared_parameter_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.mul(x, x)
        assert gradients(loss, [x], tape)[0][0] == pytest.approx(6.0)

    def test_sigmoid_slope_at_zero(self):
        x = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.sigmoid(x)
        assert gradients(loss, [x], tape)[0][0] == pytest.approx(0.25)

    def test_composite_twenty_parameters(self):
        w1, w2 = param(self.rng, 4, 3), param(self.rng, 3, 2)
        b = param(self.rng, 2)
        x = Tensor(self.rng.normal(size=(5, 4)), dtype=np.float64)
        check(lambda: ad.softplus(ad.add_bias(ad.matmul(ad.elu(ad.matmul(x, w1)), w2), b)), [w1, w2, b])


class TestSegments:
    def test_values(self):
        x = Tensor(np.array([[1.0], [3.0], [2.0], [-1.0], [-5.0], [-2.0]]))
        np.testing.assert_array_equal(ad.segment_sum(x, SEG, 4).data.ravel(), [4, 2, -8, 0])
        np.testing.assert_array_equal(ad.segment_max(x, SEG, 4).data.ravel(), [3, 2, -1, 0])
        soft = ad.segment_softmax(x, SEG, 3).data.ravel()
        assert soft[2] == pytest.approx(1.0)
        assert soft[:2].sum() == pytest.approx(1.0) and soft[3:].sum() == pytest.approx(1.0)

    def test_softmax_stable_for_large_inputs(self):
        x = Tensor(np.array([[1000.0], [1001.0]]))
        out = ad.segment_softmax(x, np.array([0, 0]), 1).data
        assert np.all(np.isfinite(out))

    def test_max_tie_gradient_goes_to_first(self):
        x = Tensor(np.array([[2.0], [2.0]]), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = ad.total(ad.segment_max(x, np.array([0, 0]), 1))
        np.testing.assert_array_equal(gradients(loss, [x], tape)[0].ravel(), [1.0, 0.0])

    def test_bad_segments(self):
        x = Tensor(np.zeros((3, 1)))
        with pytest.raises(ValueError):
            ad.segment_sum(x, np.array([0, 1]), 2)
        with pytest.raises(ValueError):
            ad.segment_sum(x, np.array([0, 1, 2]), 2)


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_non_scalar_loss(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with Tape() as tape:
            y = ad.square(x)
        with pytest.raises(ValueError):
            gradients(y, [x], tape)

    def test_parameter_off_tape(self):
        x = Tensor(np.zeros(1), requires_grad=True)
        z = Tensor(np.zeros(1), requires_grad=True)
        with Tape() as tape:
            y = ad.square(x)
        with pytest.raises(ValueError):
            gradients(y, [z], tape)

    def test_no_tape_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            with no_tape():
                ad.square(x)
        assert len(tape) == 0

    def test_integer_data_becomes_float(self):
        assert Tensor([1, 2]).dtype == np.float32


class TestDropout:
    def test_eval_mode_identity(self):
        x = Tensor(np.ones((4, 4)))
        assert ad.dropout(x, 0.5, None) is x
        assert ad.dropout(x, 0.0, DropoutRNG(1)) is x

    def test_rate_bounds(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(2)), 1.0, DropoutRNG(0))

    def test_reproducible_masks(self):
        x = Tensor(np.ones((50, 20)))
        a = ad.dropout(x, 0.3, DropoutRNG(7).start(2)).data
        b = ad.dropout(x, 0.3, DropoutRNG(7).start(2)).data
        c = ad.dropout(x, 0.3, DropoutRNG(7).start(3)).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sites_differ_within_pass(self):
        rng = DropoutRNG(1).start(0)
        assert not np.array_equal(rng.keep_mask((30, 30), 0.5), rng.keep_mask((30, 30), 0.5))

    def test_inverted_scaling(self):
        x = Tensor(np.ones((400, 400)))
        out = ad.dropout(x, 0.2, DropoutRNG(0)).data
        assert set(np.unique(out).round(6)) <= {0.0, 1.25}
        assert out.mean() == pytest.approx(1.0, abs=0.01)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, dtype=np.float64)
        g = np.array([0.3, -4.0, 1e-3])
        adam_step([p], [g], AdamState(lr=1e-2))
        np.testing.assert_allclose(p.data, [1.0 - 1e-2, -2.0 + 1e-2, 0.5 - 1e-2], rtol=1e-4)

    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
        adam_step([p], [np.zeros(2)], AdamState())
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_minimises_quadratic(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True, dtype=np.float64)
        state = AdamState(lr=0.1)
        for _ in range(500):
            with Tape() as tape:
                loss = ad.total(ad.square(p))
            adam_step([p], gradients(loss, [p], tape), state)
        assert np.abs(p.data).max() < 1e-2
        assert state.step == 500

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError):
            adam_step([p], [np.zeros(3)], AdamState())
        with pytest.raises(ValueError):
            adam_step([p], [], AdamState())
