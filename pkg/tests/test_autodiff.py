import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv2d_loop
from specsr import autodiff as ad
from specsr.autodiff import GraphError, ShapeError, Tensor
from specsr.gradcheck import NETWORK_TOL, PRIMITIVE_TOL, network_check, primitive_checks


def T(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


class TestConv2d:
    def test_identity_kernel(self):
        x = T(np.ones((1, 3, 3)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        out = ad.conv2d(x, T(k), T([0.0]))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_kernel(self, rng):
        x = T(rng.standard_normal((2, 5, 4)))
        out = ad.conv2d(x, T(np.zeros((3, 2, 3, 3))), T(np.zeros(3)))
        assert out.shape == (3, 5, 4)
        assert not out.data.any()

    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_loop(self, rng, k):
        x = rng.standard_normal((2, 5, 6))
        w = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        out = ad.conv2d(T(x), T(w), T(b))
        np.testing.assert_allclose(out.data, conv2d_loop(x, w, b), atol=1e-5)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            ad.conv2d(T(np.zeros((2, 4, 4))), T(np.zeros((1, 3, 3, 3))), T(np.zeros(1)))

    def test_linearity(self, rng):
        x, y = rng.standard_normal((2, 2, 6, 6))
        k = T(rng.standard_normal((3, 2, 3, 3)))
        b = rng.standard_normal(3).astype(np.float32)
        zero = T(np.zeros(3))
        lhs = ad.conv2d(T(1.5 * x - 0.7 * y), k, T(b)).data
        rhs = 1.5 * ad.conv2d(T(x), k, zero).data - 0.7 * ad.conv2d(T(y), k, zero).data + b[:, None, None]
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 7), w=st.integers(1, 7), k=st.sampled_from([1, 3]))
    def test_preserves_spatial_shape(self, h, w, k):
        out = ad.conv2d(T(np.ones((2, h, w))), T(np.ones((4, 2, k, k))), T(np.zeros(4)))
        assert out.shape == (4, h, w)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(ad.relu(T([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_all_negative_has_zero_grad(self):
        x = T(-np.arange(1, 7).reshape(1, 2, 3))
        ad.backward(ad.sum_all(ad.relu(x)))
        assert not x.grad.any()

    def test_sigmoid(self):
        s = ad.sigmoid(T([0.0, 60.0, -60.0]))
        assert s.data[0] == 0.5
        assert s.data[1] == pytest.approx(1.0) and s.data[2] == pytest.approx(0.0, abs=1e-20)
        x = T([60.0])
        ad.backward(ad.sum_all(ad.sigmoid(x)))
        assert abs(x.grad[0]) < 1e-20

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float32, (3, 4), elements=st.floats(-80, 80, width=32)))
    def test_sigmoid_open_interval(self, a):
        s = ad.sigmoid(T(a.reshape(3, 2, 2))).data
        assert np.all(np.isfinite(s)) and np.all(s >= 0) and np.all(s <= 1)

    def test_pool_values(self):
        x = T(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert ad.global_pool(x, "max").data.ravel()[0] == 4
        assert ad.global_pool(x, "mean").data.ravel()[0] == 2.5
        c = T(np.full((2, 3, 3), 0.7))
        for mode in ("max", "mean"):
            np.testing.assert_allclose(ad.global_pool(c, mode).data.ravel(), 0.7, rtol=1e-6)

    def test_max_pool_routes_to_first_tie(self):
        x = T(np.array([[[5.0, 1.0], [5.0, 5.0]]]))
        ad.backward(ad.sum_all(ad.global_pool(x, "max")))
        np.testing.assert_array_equal(x.grad, [[[1, 0], [0, 0]]])

    def test_channel_scale_ones_is_identity(self, rng):
        x = T(rng.standard_normal((3, 2, 2)))
        np.testing.assert_array_equal(ad.channel_scale(x, T(np.ones(3))).data, x.data)

    def test_add_negated_is_zero(self, rng):
        x = T(rng.standard_normal((2, 3, 3)))
        assert not ad.add(x, ad.scale(x, -1.0)).data.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(T(np.zeros((1, 2, 2))), T(np.zeros((1, 2, 3))))
        with pytest.raises(ShapeError):
            ad.concat_channels([T(np.zeros((1, 2, 2))), T(np.zeros((1, 3, 2)))])
        with pytest.raises(ShapeError):
            ad.channel_scale(T(np.zeros((3, 2, 2))), T(np.zeros(2)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Tensor([np.nan])


class TestBackward:
    def test_scale_three(self):
        p = T(np.ones((2, 2, 2)))
        ad.backward(ad.sum_all(ad.scale(p, 3.0)))
        np.testing.assert_array_equal(p.grad, 3.0)

    def test_unreached_param_gets_zero(self):
        p, q = T(np.ones((1, 2, 2))), T(np.ones((1, 2, 2)))
        ad.backward(ad.sum_all(p), [p, q])
        np.testing.assert_array_equal(q.grad, 0.0)

    def test_non_scalar_rejected(self):
        with pytest.raises(GraphError):
            ad.backward(ad.relu(T(np.ones((1, 2, 2)))))

    def test_second_backward_rejected(self):
        p = T(np.ones((1, 2, 2)))
        loss = ad.sum_all(ad.relu(p))
        ad.backward(loss)
        with pytest.raises(GraphError):
            ad.backward(loss)

    def test_reverse_topological_order(self):
        p = T(np.ones((1, 2, 2)))
        loss = ad.sum_all(ad.sigmoid(ad.relu(ad.scale(p, 2.0))))
        assert ad.backward(loss) == ["sum", "sigmoid", "relu", "scale"]

    def test_shared_input_accumulates(self):
        p = T(np.full((1, 1, 1), 2.0))
        ad.backward(ad.sum_all(ad.mul(p, p)))
        assert p.grad.ravel()[0] == pytest.approx(4.0)

    def test_deterministic(self, rng):
        x = rng.standard_normal((2, 6, 6)).astype(np.float32)
        kd = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)

        def run():
            k, b = T(kd), T(np.zeros(3))
            ad.backward(ad.sum_all(ad.relu(ad.conv2d(T(x), k, b))))
            return k.grad.copy()

        assert np.array_equal(run(), run())


def test_finite_difference_primitives():
    rng = np.random.default_rng(11)
    for res in primitive_checks(rng):
        assert res.passed, res.line()
        assert res.max_rel_err < PRIMITIVE_TOL


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finite_difference_network(seed):
    res = network_check(np.random.default_rng(100 + seed), seed)
    assert res.passed, res.line()
    assert res.max_rel_err < NETWORK_TOL


def test_fd_checker_catches_wrong_gradient(rng):
    x = T(rng.standard_normal((1, 3, 3)))
    bad = lambda: ad.custom_op("bad", np.array([float((x.data ** 2).sum())]), (x,), lambda g: (x.data * g[0],))
    rows = ad.check_gradients(bad, {"x": x}, rng)
    assert max(r[4] for r in rows) > 0.3


def test_fd_checker_skips_kinks():
    x = T(np.array([[[0.0004, 1.0]]]))
    rows = ad.check_gradients(lambda: ad.sum_all(ad.relu(x)), {"x": x}, np.random.default_rng(0),
                              coords_per_tensor=None)
    assert [r[1] for r in rows] == [(0, 0, 1)]
