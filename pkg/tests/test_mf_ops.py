import numpy as np
import pytest

from hadanet.mf_ops import (
    MfKernel,
    MfVariant,
    PadMode,
    conv_output_size,
    delta_hat,
    mf_depthwise_conv,
    mf_dot,
    mf_grad,
    mf_matmul,
    mf_scalar,
)


def sum_mag_closed_form(w, x):
    # independent re-statement: sign(w)*x + w*sign(x)
    return np.sign(w) * x + w * np.sign(x)


class TestScalar:
    def test_sum_example(self):
        assert mf_scalar(3.0, -2.0, MfVariant.SUM_MAG) == -5.0

    def test_max_example_and_identity(self):
        got = mf_scalar(3.0, -2.0, MfVariant.MAX_MAG)
        assert got == -6.0
        assert abs(3.0 + -2.0) + abs(3.0 - -2.0) == 6.0  # |1| + |5|

    def test_min_example_and_identity(self):
        got = mf_scalar(3.0, -2.0, MfVariant.MIN_MAG)
        assert got == -4.0
        assert abs(abs(3.0 + -2.0) - abs(3.0 - -2.0)) == 4.0  # ||1| - |5||

    def test_zero_operands_give_zero(self):
        for variant in MfVariant:
            assert mf_scalar(0.0, 5.0, variant) == 0.0
            assert mf_scalar(5.0, 0.0, variant) == 0.0
            assert mf_scalar(0.0, 0.0, variant) == 0.0

    def test_sign_agreement(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(-4, 4, 20_000)
        x = rng.uniform(-4, 4, 20_000)
        for variant in MfVariant:
            np.testing.assert_array_equal(
                np.sign(mf_scalar(w, x, variant)), np.sign(w * x)
            )

    def test_dual_forms_agree(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-5, 5, 100_000)
        x = rng.uniform(-5, 5, 100_000)
        s = np.sign(w * x)
        np.testing.assert_allclose(
            mf_scalar(w, x, MfVariant.MAX_MAG),
            2.0 * s * np.maximum(np.abs(w), np.abs(x)),
            atol=1e-6,
        )
        np.testing.assert_allclose(
            mf_scalar(w, x, MfVariant.MIN_MAG),
            2.0 * s * np.minimum(np.abs(w), np.abs(x)),
            atol=1e-6,
        )

    def test_magnitude_ordering(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(-3, 3, 10_000)
        x = rng.uniform(-3, 3, 10_000)
        nz = w * x != 0
        small = np.abs(mf_scalar(w, x, MfVariant.MIN_MAG))[nz]
        mid = np.abs(mf_scalar(w, x, MfVariant.SUM_MAG))[nz]
        big = np.abs(mf_scalar(w, x, MfVariant.MAX_MAG))[nz]
        assert np.all(small <= mid + 1e-12)
        assert np.all(mid <= big + 1e-12)


class TestDot:
    def test_example_both_closed_forms(self):
        w = np.asarray([1.0, -2.0])
        x = np.asarray([3.0, 4.0])
        assert mf_dot(w, x) == -2.0
        assert np.sum(sum_mag_closed_form(w, x)) == -2.0

    def test_self_dot_is_twice_l1_norm(self):
        x = np.asarray([1.0, -2.0, 3.0])
        assert mf_dot(x, x) == 12.0
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = rng.standard_normal(rng.integers(1, 20))
            assert mf_dot(v, v) == 2.0 * np.sum(np.abs(v))

    def test_zero_vector(self):
        x = np.asarray([1.0, -2.0, 3.0])
        assert mf_dot(np.zeros(3), x) == 0.0

    def test_closed_forms_agree_on_random_vectors(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 30))
            w = rng.standard_normal(n)
            x = rng.standard_normal(n)
            assert mf_dot(w, x) == np.sum(sum_mag_closed_form(w, x))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mf_dot(np.zeros(3), np.zeros(4))


class TestMatmul:
    def test_degenerate_1x1(self):
        out = mf_matmul(np.asarray([[3.0]]), np.asarray([[-2.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == mf_scalar(3.0, -2.0)

    def test_single_column_self_product(self):
        x = np.asarray([[1.0], [-2.0], [3.0]])
        assert mf_matmul(x, x)[0, 0] == 12.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(5)
        W = rng.standard_normal((4, 3))
        X = rng.standard_normal((4, 2))
        for variant in MfVariant:
            want = np.empty((3, 2))
            for i in range(3):
                for j in range(2):
                    want[i, j] = sum(
                        mf_scalar(W[k, i], X[k, j], variant) for k in range(4)
                    )
            np.testing.assert_allclose(mf_matmul(W, X, variant), want, rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mf_matmul(np.zeros((3, 2)), np.zeros((4, 2)))


class TestDepthwiseConv:
    def make_kernel(self, weights, **kw):
        return MfKernel(np.asarray(weights, dtype=np.float32), **kw)

    def test_zero_weights(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 4, 4, 2)).astype(np.float32)
        out = mf_depthwise_conv(x, self.make_kernel(np.zeros((3, 3, 2))))
        np.testing.assert_array_equal(out, 0.0)

    def test_zero_input(self):
        rng = np.random.default_rng(7)
        k = self.make_kernel(rng.standard_normal((3, 3, 2)))
        out = mf_depthwise_conv(np.zeros((1, 4, 4, 2), dtype=np.float32), k)
        np.testing.assert_array_equal(out, 0.0)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
        weights = rng.standard_normal((3, 3, 2)).astype(np.float32)
        out = mf_depthwise_conv(x, self.make_kernel(weights))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        want = np.zeros_like(out)
        for i in range(5):
            for j in range(5):
                for c in range(2):
                    acc = 0.0
                    for di in range(3):
                        for dj in range(3):
                            acc += float(
                                mf_scalar(weights[di, dj, c], xp[0, i + di, j + dj, c])
                            )
                    want[0, i, j, c] = acc
        np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-6)

    def test_stride_two_same_shape(self):
        x = np.ones((1, 4, 4, 1), dtype=np.float32)
        k = self.make_kernel(np.ones((3, 3, 1)), stride=2)
        assert mf_depthwise_conv(x, k).shape == (1, 2, 2, 1)

    def test_valid_padding_shape(self):
        x = np.ones((1, 5, 5, 1), dtype=np.float32)
        k = self.make_kernel(np.ones((3, 3, 1)), padding=PadMode.VALID)
        assert mf_depthwise_conv(x, k).shape == (1, 3, 3, 1)

    def test_channel_mismatch_rejected(self):
        x = np.ones((1, 4, 4, 2), dtype=np.float32)
        with pytest.raises(ValueError, match="channels"):
            mf_depthwise_conv(x, self.make_kernel(np.ones((3, 3, 3))))

    def test_kernel_validation(self):
        with pytest.raises(ValueError):
            MfKernel(np.ones((2, 2, 1)))
        with pytest.raises(ValueError):
            MfKernel(np.ones((3, 3, 1)), alpha=0.0)
        with pytest.raises(ValueError):
            MfKernel(np.ones((3, 3, 1)), stride=0)


class TestSurrogateGrad:
    def test_far_from_zero_reduces_to_signs(self):
        ddw, ddx = mf_grad(3.0, 2.0, MfVariant.SUM_MAG, alpha=10.0)
        assert ddx == pytest.approx(1.0, abs=1e-12)
        assert ddw == pytest.approx(1.0, abs=1e-12)

    def test_delta_spike_at_zero(self):
        _, ddx = mf_grad(3.0, 0.0, MfVariant.SUM_MAG, alpha=10.0)
        assert ddx == pytest.approx(61.0)  # sign(3) + 2*3*delta_hat(0), delta_hat(0)=alpha

    def test_zero_input_kills_weight_grad(self):
        ddw, _ = mf_grad(3.0, 0.0, MfVariant.SUM_MAG, alpha=10.0)
        assert ddw == 0.0  # sign(0) + 2*0*delta_hat(3)

    def test_matches_symbolic_re_derivation(self):
        # independent re-statement of the surrogate formula
        rng = np.random.default_rng(9)
        w = rng.uniform(-2, 2, 5000)
        x = rng.uniform(-2, 2, 5000)
        alpha = 10.0

        def dh(u):
            return alpha * (1.0 / np.cosh(alpha * u)) ** 2  # sech^2 identity

        ddw, ddx = mf_grad(w, x, MfVariant.SUM_MAG, alpha)
        np.testing.assert_allclose(ddw, np.sign(x) + 2 * x * dh(w), atol=1e-9)
        np.testing.assert_allclose(ddx, np.sign(w) + 2 * w * dh(x), atol=1e-9)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            mf_grad(1.0, 1.0, alpha=-1.0)

    def test_delta_hat_peak_value(self):
        assert delta_hat(0.0, 10.0) == pytest.approx(10.0)

    @pytest.mark.parametrize("variant", [MfVariant.MAX_MAG, MfVariant.MIN_MAG])
    def test_experimental_variants_match_relaxed_fd_away_from_zero(self, variant):
        # magnitudes >= 0.7 keep operands outside the delta region, where the
        # surrogate should equal the slope of the true (locally smooth) operator
        rng = np.random.default_rng(10)
        w = rng.uniform(0.7, 1.5, 2000) * rng.choice([-1, 1], 2000)
        x = rng.uniform(0.7, 1.5, 2000) * rng.choice([-1, 1], 2000)
        keep = np.abs(np.abs(w) - np.abs(x)) > 1e-3  # stay off the max/min tie
        w, x = w[keep], x[keep]
        eps = 1e-6
        fd_w = (mf_scalar(w + eps, x, variant) - mf_scalar(w - eps, x, variant)) / (2 * eps)
        fd_x = (mf_scalar(w, x + eps, variant) - mf_scalar(w, x - eps, variant)) / (2 * eps)
        ddw, ddx = mf_grad(w, x, variant, alpha=10.0)
        np.testing.assert_allclose(ddw, fd_w, atol=1e-2)
        np.testing.assert_allclose(ddx, fd_x, atol=1e-2)


class TestConvArithmetic:
    @pytest.mark.parametrize(
        "size,stride,pad,want",
        [
            (28, 2, PadMode.SAME, 14),
            (7, 2, PadMode.SAME, 4),
            (5, 1, PadMode.VALID, 3),
            (5, 2, PadMode.VALID, 2),
        ],
    )
    def test_output_sizes(self, size, stride, pad, want):
        assert conv_output_size(size, stride, pad) == want
