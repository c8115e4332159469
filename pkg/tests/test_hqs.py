import numpy as np
import pytest

from oracles import smooth_loop
from specsr import hqs, spectral as sp
from specsr.autodiff import ShapeError
from specsr.spectral import SpectralCube


def instance(seed, C=8, c=3, size=8):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0, 1, (c, C))
    m /= m.sum(axis=1, keepdims=True)
    phi = sp.DegradationOperator(m, np.arange(C) * 10.0 + 400)
    x_true = rng.uniform(0, 1, (C, size, size)).astype(np.float32)
    return phi, x_true, sp.apply_degradation(phi, SpectralCube(x_true))


class TestXStep:
    def test_zero_epsilon(self, rng):
        phi, x, y = instance(0)
        h = rng.uniform(size=x.shape)
        out = hqs.hqs_x_step(x, h, y, phi, 0.0, 0.3)
        np.testing.assert_array_equal(out.data, x)

    def test_fixed_point(self):
        phi, x, y = instance(1)
        out = hqs.hqs_x_step(x, x, y, phi, 0.5, 0.3)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_matches_dense_form(self, rng):
        phi, _, _ = instance(2, C=5, c=2, size=3)
        x = rng.standard_normal((5, 3, 3))
        h = rng.standard_normal((5, 3, 3))
        y = rng.standard_normal((2, 3, 3))
        eps, mu = 0.4, 0.25
        m = phi.matrix.astype(np.float64)
        big = (1 - eps * mu) * np.eye(5) - eps * m.T @ m
        expected = np.zeros_like(x)
        for i in range(3):
            for j in range(3):
                expected[:, i, j] = big @ x[:, i, j] + eps * m.T @ y[:, i, j] + eps * mu * h[:, i, j]
        out = hqs.hqs_x_step(x, h, y, phi, eps, mu)
        np.testing.assert_allclose(out.data, expected, atol=1e-5)

    def test_shape_mismatch(self):
        phi, x, y = instance(3)
        with pytest.raises(ShapeError):
            hqs.hqs_x_step(x[:4], x[:4], y, phi, 0.1, 0.0)


class TestPrior:
    def test_lambda_zero(self, rng):
        x = rng.uniform(size=(4, 4, 4)).astype(np.float32)
        for prior in ("identity", "spatial_spectral_smoothing"):
            np.testing.assert_array_equal(hqs.denoise_prior(x, 0.0, prior).data, x)

    def test_constant_preserved(self):
        x = np.full((4, 5, 3), 0.42, dtype=np.float32)
        for prior in ("identity", "spatial_spectral_smoothing"):
            np.testing.assert_allclose(hqs.denoise_prior(x, 2.0, prior).data, x, atol=1e-7)

    def test_matches_loop(self, rng):
        x = rng.uniform(size=(4, 4, 4)).astype(np.float32)
        out = hqs.denoise_prior(x, 1.0, "spatial_spectral_smoothing")
        np.testing.assert_allclose(out.data, smooth_loop(x, 1.0), atol=1e-6)


class TestSolve:
    def test_consistent_instance_reaches_least_squares(self):
        phi, x_true, y = instance(4)
        eps = 1.0 / hqs.spectral_norm_sq(phi)
        res = hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=eps, max_iters=10_000))
        assert res.converged
        assert hqs.normal_residual(phi, res.x, y) < 1e-5
        assert all(b <= a for a, b in zip(res.fidelity, res.fidelity[1:]))
        m = phi.matrix.astype(np.float64)
        x_ls = np.linalg.pinv(m) @ y.data.reshape(3, -1).astype(np.float64)
        np.testing.assert_allclose(res.x.data.reshape(8, -1), x_ls, atol=1e-4)

    def test_identity_operator(self, rng):
        phi = sp.DegradationOperator(np.eye(4), np.arange(4.0))
        y = SpectralCube(rng.uniform(size=(4, 3, 3)))
        res = hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=1.0, max_iters=100))
        assert hqs.normal_residual(phi, res.x, y) < 1e-6

    def test_smoothing_with_zero_lambda_matches_identity(self):
        phi, _, y = instance(5)
        a = hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=0.5, max_iters=50, prior="identity"))
        b = hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=0.5, max_iters=50, prior="spatial_spectral_smoothing"))
        assert np.array_equal(a.x.data, b.x.data)
        assert a.fidelity == b.fidelity

    def test_smoothing_prior_runs(self):
        phi, _, y = instance(6)
        res = hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=0.5, mu=0.5, lam=1.0, max_iters=200,
                                                  prior="spatial_spectral_smoothing"))
        assert np.all(np.isfinite(res.x.data))
        assert len(res.fidelity) == len(res.update_norm) == res.iterations

    def test_unstable_step_rejected(self):
        phi, _, y = instance(7)
        with pytest.raises(hqs.HqsConfigError):
            hqs.solve_hqs(y, phi, hqs.HqsConfig(epsilon=100.0))

    def test_power_iteration(self):
        phi, _, _ = instance(8)
        m = phi.matrix.astype(np.float64)
        assert hqs.spectral_norm_sq(phi) == pytest.approx(np.linalg.eigvalsh(m.T @ m).max(), rel=1e-6)

    @pytest.mark.parametrize("kw", [dict(epsilon=0), dict(mu=-1), dict(lam=-1), dict(max_iters=0),
                                    dict(prior="median")])
    def test_bad_config(self, kw):
        with pytest.raises(hqs.HqsConfigError):
            hqs.HqsConfig(**kw)
