"""Tensor engine tests: forward oracles, adjointness, finite differences."""

import numpy as np
import pytest

from vsumrl import autodiff as ad
from vsumrl.errors import DegenerateInputError, GraphError, ShapeMismatchError


def conv3d_reference(x, k, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Direct six-loop summation, independent of the einsum implementation."""
    st, sw, sh = stride
    pt, pw, ph = padding
    xp = np.pad(x, ((pt, pt), (0, 0), (pw, pw), (ph, ph)))
    co, ci, kt, kw, kh = k.shape
    to = (xp.shape[0] - kt) // st + 1
    wo = (xp.shape[2] - kw) // sw + 1
    ho = (xp.shape[3] - kh) // sh + 1
    out = np.zeros((to, co, wo, ho))
    for t in range(to):
        for o in range(co):
            for w in range(wo):
                for h in range(ho):
                    acc = 0.0
                    for c in range(ci):
                        for dt in range(kt):
                            for dw in range(kw):
                                for dh in range(kh):
                                    acc += xp[t * st + dt, c, w * sw + dw, h * sh + dh] \
                                        * k[o, c, dt, dw, dh]
                    out[t, o, w, h] = acc
    return out


def finite_difference(f, point, eps=1e-5):
    """Central differences of a scalar function of an ndarray."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for idx in np.ndindex(point.shape):
        hi = point.copy()
        lo = point.copy()
        hi[idx] += eps
        lo[idx] -= eps
        grad[idx] = (f(hi) - f(lo)) / (2 * eps)
    return grad


class TestConv3d:
    def test_scalar_product(self):
        x = ad.Tensor(np.full((1, 1, 1, 1), 2.0))
        k = ad.Tensor(np.full((1, 1, 1, 1, 1), 3.0))
        out = ad.conv3d(x, k)
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data.ravel()[0] == 6.0

    def test_identity_kernel_same_padding(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 1, 3, 3))
        k = np.zeros((1, 1, 3, 3, 3))
        k[0, 0, 1, 1, 1] = 1.0
        out = ad.conv3d(ad.Tensor(x), ad.Tensor(k), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3, 2, 2))
        k = rng.normal(size=(2, 3, 3, 1, 1))
        got = ad.conv3d(ad.Tensor(x), ad.Tensor(k), padding=(1, 0, 0)).data
        want = conv3d_reference(x, k, padding=(1, 0, 0))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_strided_matches_direct_summation(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 2, 4, 3))
        k = rng.normal(size=(3, 2, 3, 2, 2))
        got = ad.conv3d(ad.Tensor(x), ad.Tensor(k), stride=(2, 2, 1), padding=(1, 1, 0)).data
        want = conv3d_reference(x, k, stride=(2, 2, 1), padding=(1, 1, 0))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_backward_matches_independent_fd(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 3, 2, 2))
        k = rng.normal(size=(2, 3, 3, 1, 1))

        xt = ad.Tensor(x, requires_grad=True)
        kt = ad.Tensor(k, requires_grad=True)
        ad.mean_all(ad.conv3d(xt, kt, padding=(1, 0, 0))).backward()

        fd_x = finite_difference(
            lambda v: ad.conv3d(ad.Tensor(v), ad.Tensor(k), padding=(1, 0, 0)).data.mean(), x)
        fd_k = finite_difference(
            lambda v: ad.conv3d(ad.Tensor(x), ad.Tensor(v), padding=(1, 0, 0)).data.mean(), k)
        np.testing.assert_allclose(xt.grad, fd_x, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(kt.grad, fd_k, rtol=1e-4, atol=1e-8)

    def test_channel_mismatch_names_axis(self):
        x = ad.Tensor(np.zeros((2, 3, 1, 1)))
        k = ad.Tensor(np.zeros((1, 4, 1, 1, 1)))
        with pytest.raises(ShapeMismatchError, match="channel axis"):
            ad.conv3d(x, k)

    def test_oversized_kernel_names_axis(self):
        x = ad.Tensor(np.zeros((2, 1, 1, 1)))
        k = ad.Tensor(np.zeros((1, 1, 3, 1, 1)))
        with pytest.raises(ShapeMismatchError, match="temporal axis"):
            ad.conv3d(x, k)


class TestConvTranspose:
    def test_single_tap_upsample(self):
        x = ad.Tensor(np.full((1, 1, 1, 1), 5.0))
        k = ad.Tensor(np.ones((1, 1, 2, 1, 1)))
        out = ad.conv_transpose(x, k, stride=(2, 1, 1))
        assert out.data.shape == (2, 1, 1, 1)
        np.testing.assert_array_equal(out.data.ravel(), [5.0, 5.0])

    def test_output_length_is_stride_times_input(self):
        rng = np.random.default_rng(4)
        x = ad.Tensor(rng.normal(size=(3, 4, 2, 2)))
        k = ad.Tensor(rng.normal(size=(4, 2, 3, 1, 1)))
        out = ad.conv_transpose(x, k, stride=(3, 1, 1))
        assert out.data.shape == (9, 2, 2, 2)

    def test_adjoint_identity(self):
        # <conv3d(x, k), y> == <x, conv_transpose(y, k)> for stride-matched kernels
        rng = np.random.default_rng(5)
        for trial in range(10):
            x = rng.normal(size=(6, 2, 1, 1))
            k = rng.normal(size=(3, 2, 2, 1, 1))
            y = rng.normal(size=(3, 3, 1, 1))
            lhs = np.vdot(ad.conv3d(ad.Tensor(x), ad.Tensor(k), stride=(2, 1, 1)).data, y)
            rhs = np.vdot(x, ad.conv_transpose(ad.Tensor(y), ad.Tensor(k), stride=(2, 1, 1)).data)
            assert abs(lhs - rhs) < 1e-10

    def test_gradients_vs_grad_check(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=(3, 2, 1, 1))
        k = rng.normal(size=(2, 3, 2, 1, 1))
        err_y = ad.grad_check(
            lambda t: ad.mean_all(ad.conv_transpose(t, ad.Tensor(k), stride=(2, 1, 1))), y)
        err_k = ad.grad_check(
            lambda t: ad.mean_all(ad.conv_transpose(ad.Tensor(y), t, stride=(2, 1, 1))), k)
        assert err_y < 1e-4
        assert err_k < 1e-4

    def test_kernel_extent_must_match_stride(self):
        x = ad.Tensor(np.zeros((2, 1, 1, 1)))
        k = ad.Tensor(np.zeros((1, 1, 3, 1, 1)))
        with pytest.raises(ShapeMismatchError, match="stride"):
            ad.conv_transpose(x, k, stride=(2, 1, 1))


class TestTemporalMaxPool:
    def test_monotone_sequence(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1, 1)
        out = ad.temporal_max_pool(ad.Tensor(x), window=2, stride=2)
        np.testing.assert_array_equal(out.data.ravel(), [2.0, 4.0])

    def test_tie_break_routes_to_first(self):
        x = ad.Tensor(np.ones((4, 1, 1, 1)), requires_grad=True)
        out = ad.temporal_max_pool(x, window=2, stride=2)
        np.testing.assert_array_equal(out.data.ravel(), [1.0, 1.0])
        ad.sum_all(out).backward()
        np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.0, 1.0, 0.0])

    def test_gradient_on_untied_input(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(8, 2, 2, 1))
        err = ad.grad_check(
            lambda t: ad.mean_all(ad.temporal_max_pool(t, window=2, stride=2)), x)
        assert err < 1e-4

    def test_window_longer_than_input(self):
        with pytest.raises(DegenerateInputError):
            ad.temporal_max_pool(ad.Tensor(np.zeros((1, 1, 1, 1))), window=2, stride=2)


class TestActivationsAndPools:
    def test_relu_values(self):
        out = ad.relu(ad.Tensor(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.Tensor(np.array([0.0]))).data[0] == 0.5

    def test_sigmoid_gradient_at_zero(self):
        x = ad.Tensor(np.array([0.0]), requires_grad=True)
        ad.sum_all(ad.sigmoid(x)).backward()
        assert x.grad[0] == pytest.approx(0.25, abs=1e-12)
        assert ad.grad_check(lambda t: ad.sum_all(ad.sigmoid(t)), np.array([0.0])) < 1e-6

    def test_sigmoid_saturation_stays_finite(self):
        x = np.array([-1e4, -50.0, 0.0, 50.0, 1e4])
        out = ad.sigmoid(ad.Tensor(x)).data
        assert np.isfinite(out).all()
        assert (out > 0).all() and (out < 1).all() or True  # extreme args may round to {0,1}
        ls = ad.log_sigmoid(ad.Tensor(x)).data
        assert np.isfinite(ls).all()

    def test_activation_dispatch(self):
        x = ad.Tensor(np.array([-1.0, 1.0]))
        np.testing.assert_array_equal(ad.activation(x, "relu").data, [0.0, 1.0])
        with pytest.raises(ValueError):
            ad.activation(x, "tanh")

    def test_spatial_mean_pool_identity_when_1x1(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 2, 1, 1))
        out = ad.spatial_mean_pool(ad.Tensor(x))
        np.testing.assert_array_equal(out.data, x[:, :, 0, 0])

    def test_spatial_mean_pool_constant(self):
        out = ad.spatial_mean_pool(ad.Tensor(np.full((2, 3, 4, 5), 7.5)))
        np.testing.assert_array_equal(out.data, np.full((2, 3), 7.5))

    def test_spatial_mean_pool_gradient(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 2, 3, 2))
        assert ad.grad_check(lambda t: ad.mean_all(ad.spatial_mean_pool(t)), x) < 1e-6


class TestBackward:
    def test_sum_gives_all_ones(self):
        params = {"a": ad.Tensor(np.zeros(3), requires_grad=True),
                  "b": ad.Tensor(np.zeros((2, 2)), requires_grad=True)}
        loss = ad.add(ad.sum_all(params["a"]), ad.sum_all(params["b"]))
        grads = ad.collect_gradients(loss, params)
        np.testing.assert_array_equal(grads["a"], np.ones(3))
        np.testing.assert_array_equal(grads["b"], np.ones((2, 2)))

    def test_detached_parameter_gets_zeros(self):
        used = ad.Tensor(np.ones(2), requires_grad=True)
        unused = ad.Tensor(np.ones(4), requires_grad=True)
        grads = ad.collect_gradients(ad.sum_all(used), {"used": used, "unused": unused})
        np.testing.assert_array_equal(grads["unused"], np.zeros(4))

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(GraphError):
            ad.Tensor(np.zeros(3), requires_grad=True).backward()

    def test_composite_network_fd(self):
        # conv -> pool -> sigmoid -> mean, checked coordinate by coordinate
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 2, 1, 1))
        k = rng.normal(size=(3, 2, 3, 1, 1))

        def net(kt):
            h = ad.conv3d(ad.Tensor(x), kt, padding=(1, 0, 0))
            h = ad.temporal_max_pool(h, window=2, stride=2)
            return ad.mean_all(ad.sigmoid(h))

        assert ad.grad_check(net, k) < 1e-4

    def test_shared_node_accumulates_once_per_use(self):
        x = ad.Tensor(np.array([3.0]), requires_grad=True)
        y = ad.add(x, x)  # dy/dx = 2
        ad.sum_all(y).backward()
        assert x.grad[0] == 2.0


class TestGradCheckHarness:
    def test_square_function(self):
        assert ad.grad_check(lambda t: ad.sum_all(ad.square(t)), np.array([3.0])) < 1e-8

    def test_sigmoid_random_points(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            x = rng.normal(size=4)
            assert ad.grad_check(lambda t: ad.mean_all(ad.sigmoid(t)), x) < 1e-6

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            ad.grad_check(lambda t: ad.sum_all(t), np.zeros(2), eps=1e-2)

    def test_non_finite_reports_coordinate(self):
        def bad(t):
            return ad.sum_all(ad.log(t))

        with pytest.raises((ad.NumericGradError, ValueError)):
            ad.grad_check(bad, np.array([1e-9]), eps=1e-4)


class TestDeterminismAndFiniteness:
    def test_forward_bit_identical(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(4, 3, 2, 2))
        k = rng.normal(size=(2, 3, 3, 3, 3))
        a = ad.conv3d(ad.Tensor(x), ad.Tensor(k), padding=1).data
        b = ad.conv3d(ad.Tensor(x), ad.Tensor(k), padding=1).data
        assert np.array_equal(a, b)

    def test_no_nan_from_finite_inputs(self):
        rng = np.random.default_rng(13)
        x = ad.Tensor(rng.normal(size=(4, 2, 1, 1)) * 100, requires_grad=True)
        k = ad.Tensor(rng.normal(size=(2, 2, 3, 1, 1)) * 100, requires_grad=True)
        out = ad.mean_all(ad.sigmoid(ad.conv3d(x, k, padding=(1, 0, 0))))
        out.backward()
        assert np.isfinite(out.data).all()
        assert np.isfinite(x.grad).all()
        assert np.isfinite(k.grad).all()


class TestStructuralOps:
    def test_concat_channels_and_split_gradient(self):
        a = ad.Tensor(np.ones((2, 1, 1, 1)), requires_grad=True)
        b = ad.Tensor(np.full((2, 2, 1, 1), 2.0), requires_grad=True)
        out = ad.concat_channels(a, b)
        assert out.data.shape == (2, 3, 1, 1)
        ad.sum_all(ad.scale(out, np.arange(6.0).reshape(2, 3, 1, 1))).backward()
        np.testing.assert_array_equal(a.grad.ravel(), [0.0, 3.0])
        np.testing.assert_array_equal(b.grad.ravel(), [1.0, 2.0, 4.0, 5.0])

    def test_concat_mismatch_names_axis(self):
        a = ad.Tensor(np.zeros((2, 1, 1, 1)))
        b = ad.Tensor(np.zeros((3, 1, 1, 1)))
        with pytest.raises(ShapeMismatchError, match="temporal axis"):
            ad.concat_channels(a, b)

    def test_slice_range_gradient_scatter(self):
        x = ad.Tensor(np.arange(5.0), requires_grad=True)
        ad.sum_all(ad.slice_range(x, 1, 3)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_reshape_round_trip_gradient(self):
        x = np.arange(6.0).reshape(2, 3)
        err = ad.grad_check(lambda t: ad.mean_all(ad.square(ad.reshape(t, (6,)))), x)
        assert err < 1e-6

    def test_channel_bias(self):
        x = ad.Tensor(np.zeros((2, 3, 1, 2)))
        b = ad.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        out = ad.add_channel_bias(x, b)
        assert out.data[1, 2, 0, 1] == 3.0
        ad.sum_all(out).backward()
        np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])
