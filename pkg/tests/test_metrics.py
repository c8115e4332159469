import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cc_loop, psnr_loop, sam_degrees_loop, ssim_loop
from specsr.autodiff import ShapeError
from specsr.data import dihedral
from specsr.metrics import metrics


def pair(seed, shape=(3, 14, 13)):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, shape)
    return np.clip(x + 0.1 * rng.standard_normal(shape), 0, 1), x


def test_identity():
    _, x = pair(0)
    r = metrics(x, x)
    assert (r.cc, r.psnr_db, r.ssim, r.sam_degrees) == (pytest.approx(1.0), 100.0, pytest.approx(1.0), 0.0)


def test_uniform_error_psnr():
    x = np.full((2, 12, 12), 0.5)
    assert metrics(x + 0.1, x).psnr_db == pytest.approx(20.0)


@pytest.mark.parametrize("seed", [1, 2])
def test_matches_scalar_loops(seed):
    a, b = pair(seed)
    r = metrics(a, b)
    assert r.cc == pytest.approx(cc_loop(a, b), abs=1e-4)
    assert r.psnr_db == pytest.approx(psnr_loop(a, b), abs=1e-4)
    assert r.ssim == pytest.approx(ssim_loop(a, b), abs=1e-4)
    assert r.sam_degrees == pytest.approx(sam_degrees_loop(a, b), abs=1e-4)


@pytest.mark.parametrize("k", range(1, 8))
def test_dihedral_invariance(k):
    a, b = pair(3, (3, 13, 13))
    r0 = metrics(a, b)
    r1 = metrics(dihedral(a, k), dihedral(b, k))
    assert r1.psnr_db == pytest.approx(r0.psnr_db, abs=1e-9)
    assert r1.cc == pytest.approx(r0.cc, abs=1e-9)
    assert r1.sam_degrees == pytest.approx(r0.sam_degrees, abs=1e-9)
    assert r1.ssim == pytest.approx(r0.ssim, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.floats(1e-3, 1e3))
def test_sam_scale_invariance(seed, s):
    a, b = pair(seed, (4, 11, 11))
    assert metrics(s * a, s * b).sam_degrees == pytest.approx(metrics(a, b).sam_degrees, abs=1e-6)


def test_constant_band_flagged():
    a, b = pair(4)
    a[1] = 0.3
    b[1] = 0.3
    a[2] = 0.4
    r = metrics(a, b)
    assert r.constant_bands == [1, 2]
    rest = cc_loop(a[:1], b[:1])
    assert r.cc == pytest.approx((rest + 1.0 + 0.0) / 3)


def test_ranges():
    a, b = pair(5)
    r = metrics(a, b)
    assert -1 <= r.cc <= 1 and r.ssim <= 1 and r.sam_degrees >= 0


def test_too_small_for_ssim():
    with pytest.raises(ShapeError):
        metrics(np.zeros((1, 10, 20)), np.zeros((1, 10, 20)))


def test_json_keys():
    a, b = pair(6)
    assert set(metrics(a, b).to_json()) == {"cc", "psnr_db", "ssim", "sam_degrees", "constant_bands"}
