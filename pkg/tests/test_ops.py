"""Tests for the fixed-function tensor ops and their backward passes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlsr.errors import ContractViolation, DiagnosticError
from mlsr.ops import (
    ParamSet,
    conv2d,
    conv2d_backward,
    finite_difference_check,
    mse_loss,
    relu,
    relu_backward,
    sgd_step,
)


def pad_reference(x, p, mode):
    if p == 0:
        return x
    if mode == "reflect":
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_oracle(x, weight, bias, padding="reflect"):
    """Direct triple-loop convolution; the independent reference for conv2d."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    p = kh // 2
    xp = pad_reference(x.astype(np.float64), p, padding)
    out = np.zeros((n, cout, h, w))
    for b in range(n):
        for o in range(cout):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, c, i + u, j + v] * weight[o, c, u, v]
                    out[b, o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def rand(rng, *shape, dtype=np.float32):
    return rng.standard_normal(shape).astype(dtype)


class TestConv2d:
    def test_1x1_scalar_product(self):
        x = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
        w = np.full((1, 1, 1, 1), 3.0, dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        assert conv2d(x, w, b)[0, 0, 0, 0] == pytest.approx(6.0)

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_delta_kernel_is_identity(self, padding):
        rng = np.random.default_rng(0)
        x = rand(rng, 2, 3, 6, 5)
        w = np.zeros((3, 3, 3, 3), dtype=np.float32)
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        y = conv2d(x, w, np.zeros(3, dtype=np.float32), padding=padding)
        np.testing.assert_array_equal(y, x)

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_matches_naive_loop_oracle(self, padding):
        rng = np.random.default_rng(7)
        x = rand(rng, 1, 2, 5, 5)
        w = rand(rng, 3, 2, 3, 3)
        b = rand(rng, 3)
        got = conv2d(x, w, b, padding=padding)
        want = conv2d_oracle(x, w, b, padding=padding)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_matches_oracle_5x5_kernel(self):
        rng = np.random.default_rng(8)
        x = rand(rng, 2, 3, 7, 6)
        w = rand(rng, 4, 3, 5, 5)
        b = rand(rng, 4)
        np.testing.assert_allclose(conv2d(x, w, b), conv2d_oracle(x, w, b), atol=1e-4)

    def test_channel_mismatch_names_dimensions(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        w = np.zeros((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(ContractViolation, match="2 channels.*expects 3"):
            conv2d(x, w, None)

    def test_even_kernel_rejected(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        w = np.zeros((1, 1, 2, 2), dtype=np.float32)
        with pytest.raises(ContractViolation, match="odd"):
            conv2d(x, w, None)

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a, b):
        rng = np.random.default_rng(11)
        x = rand(rng, 1, 2, 6, 6)
        y = rand(rng, 1, 2, 6, 6)
        w = rand(rng, 3, 2, 3, 3)
        lhs = conv2d(a * x + b * y, w, None)
        rhs = a * conv2d(x, w, None) + b * conv2d(y, w, None)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rand(rng, 2, 4, 8, 8)
        w = rand(rng, 4, 4, 3, 3)
        b = rand(rng, 4)
        np.testing.assert_array_equal(conv2d(x, w, b), conv2d(x, w, b))


class TestConv2dBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        x = rand(rng, 1, 2, 4, 4)
        w = rand(rng, 3, 2, 3, 3)
        up = np.zeros((1, 3, 4, 4), dtype=np.float32)
        gx, gw, gb = conv2d_backward(x, w, up)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_scalar_chain_rule(self):
        x = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
        w = np.full((1, 1, 1, 1), 3.0, dtype=np.float32)
        up = np.ones((1, 1, 1, 1), dtype=np.float32)
        gx, gw, gb = conv2d_backward(x, w, up)
        assert gw[0, 0, 0, 0] == pytest.approx(2.0)
        assert gx[0, 0, 0, 0] == pytest.approx(3.0)
        assert gb[0] == pytest.approx(1.0)

    def test_upstream_shape_checked(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        w = np.zeros((3, 2, 3, 3), dtype=np.float32)
        with pytest.raises(ContractViolation, match="upstream"):
            conv2d_backward(x, w, np.zeros((1, 3, 5, 4), dtype=np.float32))

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    @pytest.mark.parametrize("ksize", [3, 5])
    def test_matches_finite_differences(self, padding, ksize):
        # FD oracle on the scalar <upstream, conv2d(x, w, b)>, run in float64.
        rng = np.random.default_rng(42)
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((2, 2, ksize, ksize))
        b = rng.standard_normal(2)
        up = rng.standard_normal((1, 2, 6, 6))

        def scalar(xv, wv, bv):
            return float(np.sum(up * conv2d(xv, wv, bv, padding=padding)))

        gx, gw, gb = conv2d_backward(x, w, up, padding=padding)
        eps = 1e-3

        def fd_check(arr, grad, evaluate):
            idxs = np.random.default_rng(1).choice(arr.size, size=min(12, arr.size), replace=False)
            for flat in idxs:
                plus = arr.copy().reshape(-1)
                plus[flat] += eps
                minus = arr.copy().reshape(-1)
                minus[flat] -= eps
                fd = (evaluate(plus.reshape(arr.shape)) - evaluate(minus.reshape(arr.shape))) / (2 * eps)
                a = grad.reshape(-1)[flat]
                assert abs(a - fd) <= 1e-3 * max(1.0, abs(a), abs(fd))

        fd_check(x, gx, lambda v: scalar(v, w, b))
        fd_check(w, gw, lambda v: scalar(x, v, b))
        fd_check(b, gb, lambda v: scalar(x, w, v))


class TestRelu:
    def test_definition(self):
        x = np.array([-1.0, 0.0, 2.0], dtype=np.float32).reshape(1, 1, 1, 3)
        np.testing.assert_array_equal(relu(x).ravel(), [0.0, 0.0, 2.0])

    def test_all_positive_is_identity(self):
        rng = np.random.default_rng(5)
        x = np.abs(rand(rng, 1, 2, 3, 3)) + 0.1
        up = rand(rng, 1, 2, 3, 3)
        np.testing.assert_array_equal(relu(x), x)
        np.testing.assert_array_equal(relu_backward(x, up), up)

    def test_subgradient_at_zero_is_zero(self):
        x = np.zeros((1, 1, 1, 2), dtype=np.float32)
        up = np.ones_like(x)
        assert not relu_backward(x, up).any()

    def test_finite_difference_away_from_zero(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 2, 4, 4))
        x[np.abs(x) < 0.05] = 0.5  # keep coordinates away from the kink
        up = rng.standard_normal(x.shape)
        g = relu_backward(x, up)
        eps = 1e-3
        for flat in np.random.default_rng(2).choice(x.size, size=10, replace=False):
            plus = x.copy().reshape(-1)
            plus[flat] += eps
            minus = x.copy().reshape(-1)
            minus[flat] -= eps
            fd = (np.sum(up * relu(plus.reshape(x.shape))) - np.sum(up * relu(minus.reshape(x.shape)))) / (2 * eps)
            a = g.reshape(-1)[flat]
            assert abs(a - fd) <= 1e-3 * max(1.0, abs(a), abs(fd))


class TestMseLoss:
    def test_identical_inputs(self):
        rng = np.random.default_rng(1)
        x = rand(rng, 1, 3, 4, 4)
        loss, grad = mse_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_single_element_closed_form(self):
        pred = np.full((1, 1, 1, 1), 1.0, dtype=np.float32)
        target = np.zeros_like(pred)
        loss, grad = mse_loss(pred, target)
        assert loss == pytest.approx(1.0)
        assert grad[0, 0, 0, 0] == pytest.approx(2.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        pred = rng.standard_normal((1, 2, 3, 3))
        target = rng.standard_normal((1, 2, 3, 3))
        _, grad = mse_loss(pred, target)
        eps = 1e-4
        for flat in np.random.default_rng(3).choice(pred.size, size=8, replace=False):
            plus = pred.copy().reshape(-1)
            plus[flat] += eps
            minus = pred.copy().reshape(-1)
            minus[flat] -= eps
            fd = (mse_loss(plus.reshape(pred.shape), target)[0] - mse_loss(minus.reshape(pred.shape), target)[0]) / (2 * eps)
            a = grad.reshape(-1)[flat]
            assert abs(a - fd) <= 1e-3 * max(abs(a), abs(fd))

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation, match="mse_loss shape mismatch"):
            mse_loss(np.zeros((1, 1, 2, 2), dtype=np.float32), np.zeros((1, 1, 2, 3), dtype=np.float32))


def small_params(rng):
    return ParamSet(
        [
            ("w", rand(rng, 2, 2, 3, 3)),
            ("b", rand(rng, 2)),
        ]
    )


class TestSgdStep:
    def test_lr_zero_is_bitwise_identity(self):
        rng = np.random.default_rng(0)
        params = small_params(rng)
        grads = ParamSet((n, rand(rng, *p.shape)) for n, p in params.items())
        out = sgd_step(params, grads, 0.0)
        for n, p in params.items():
            np.testing.assert_array_equal(out[n], p)

    def test_closed_form(self):
        params = ParamSet([("p", np.full((1, 1, 1, 1), 1.0, dtype=np.float32))])
        grads = ParamSet([("p", np.full((1, 1, 1, 1), 2.0, dtype=np.float32))])
        assert sgd_step(params, grads, 0.1)["p"][0, 0, 0, 0] == pytest.approx(0.8)

    def test_uniform_shift_with_unit_grads(self):
        rng = np.random.default_rng(4)
        params = small_params(rng).astype(np.float64)
        grads = ParamSet((n, np.ones_like(p)) for n, p in params.items())
        out = sgd_step(params, grads, 1e-5)
        for n, p in params.items():
            np.testing.assert_allclose(out[n], p - 1e-5, rtol=0, atol=1e-16)

    def test_input_not_mutated(self):
        rng = np.random.default_rng(6)
        params = small_params(rng)
        before = {n: p.copy() for n, p in params.items()}
        grads = ParamSet((n, np.ones_like(p)) for n, p in params.items())
        sgd_step(params, grads, 0.5)
        for n, p in params.items():
            np.testing.assert_array_equal(p, before[n])

    def test_key_mismatch(self):
        params = ParamSet([("a", np.zeros(2, dtype=np.float32))])
        grads = ParamSet([("b", np.zeros(2, dtype=np.float32))])
        with pytest.raises(ContractViolation, match="key mismatch"):
            sgd_step(params, grads, 0.1)


class TestParamSet:
    def test_duplicate_name_rejected(self):
        with pytest.raises(ContractViolation, match="duplicate"):
            ParamSet([("a", np.zeros(1)), ("a", np.zeros(1))])

    def test_order_and_counts(self):
        ps = ParamSet([("z", np.zeros((2, 3))), ("a", np.zeros(4))])
        assert ps.names == ("z", "a")
        assert ps.total_count == 10

    def test_stored_arrays_read_only(self):
        ps = ParamSet([("a", np.zeros(3))])
        with pytest.raises(ValueError):
            ps["a"][0] = 1.0


class TestFiniteDifferenceCheck:
    def test_quadratic_is_exact(self):
        params = ParamSet([("p", np.array([3.0]))])

        def quad(ps):
            p = ps["p"]
            return float(np.sum(p * p)), ParamSet([("p", 2.0 * p)])

        err = finite_difference_check(quad, params, eps=1e-3)
        assert err <= 1e-6

    def test_zero_loss_uses_absolute_error(self):
        params = ParamSet([("p", np.array([1.0]))])

        def zero(ps):
            return 0.0, ParamSet([("p", np.zeros(1))])

        assert finite_difference_check(zero, params, eps=1e-3) == 0.0

    def test_nonfinite_loss_raises(self):
        params = ParamSet([("p", np.array([1.0]))])

        def bad(ps):
            return float("nan"), ParamSet([("p", np.zeros(1))])

        with pytest.raises(DiagnosticError, match="non-finite"):
            finite_difference_check(bad, params, eps=1e-3)

    def test_detects_wrong_gradient(self):
        params = ParamSet([("p", np.array([2.0]))])

        def wrong(ps):
            p = ps["p"]
            return float(np.sum(p * p)), ParamSet([("p", 3.0 * p)])  # should be 2p

        assert finite_difference_check(wrong, params, eps=1e-3) > 0.1
