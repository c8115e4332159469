"""Reconstruction quality: CC, PSNR, SSIM and SAM, band-averaged where applicable."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ShapeError
from .spectral import SpectralCube

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
NORM_EPSILON = 1e-12


@dataclass
class MetricsReport:
    cc: float
    psnr_db: float
    ssim: float
    sam_degrees: float
    constant_bands: list[int] = field(default_factory=list)  # bands where CC was undefined

    def to_json(self) -> dict:
        return asdict(self)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable 'valid' correlation over the last two axes
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-2) @ g


def band_cc(a: np.ndarray, b: np.ndarray):
    """Per-band Pearson correlation and the indices of bands where it is undefined."""
    c = a.shape[0]
    a = a.reshape(c, -1)
    b = b.reshape(c, -1)
    da = a - a.mean(axis=1, keepdims=True)
    db = b - b.mean(axis=1, keepdims=True)
    sa = np.sqrt((da * da).sum(axis=1))
    sb = np.sqrt((db * db).sum(axis=1))
    # test constancy on the raw values; the centred sums carry rounding residue
    const_a = np.ptp(a, axis=1) == 0
    const_b = np.ptp(b, axis=1) == 0
    flat = const_a | const_b
    cc = np.empty(c)
    ok = ~flat
    cc[ok] = np.clip((da[ok] * db[ok]).sum(axis=1) / (sa[ok] * sb[ok]), -1.0, 1.0)
    both_equal = const_a & const_b & np.all(a == b, axis=1)
    cc[flat] = np.where(both_equal[flat], 1.0, 0.0)
    return cc, np.flatnonzero(flat).tolist()


def band_psnr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        psnr = np.where(mse > 0, 10.0 * np.log10(1.0 / np.where(mse > 0, mse, 1.0)), PSNR_CAP_DB)
    return np.minimum(psnr, PSNR_CAP_DB)


def band_ssim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape[1:]}")
    g = gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return smap.reshape(a.shape[0], -1).mean(axis=1)


def pixel_sam_radians(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between spectra at every pixel, via the stable half-angle form."""
    ua = a / np.maximum(np.sqrt((a * a).sum(axis=0)), NORM_EPSILON)
    ub = b / np.maximum(np.sqrt((b * b).sum(axis=0)), NORM_EPSILON)
    d = np.sqrt(((ua - ub) ** 2).sum(axis=0))
    s = np.sqrt(((ua + ub) ** 2).sum(axis=0))
    return 2.0 * np.arctan2(d, s)


def metrics(xhat, x) -> MetricsReport:
    a = (xhat.data if isinstance(xhat, SpectralCube) else np.asarray(xhat)).astype(np.float64)
    b = (x.data if isinstance(x, SpectralCube) else np.asarray(x)).astype(np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeError(f"metrics need equal [C,H,W] cubes, got {a.shape} and {b.shape}")
    cc, flat = band_cc(a, b)
    return MetricsReport(
        cc=float(cc.mean()),
        psnr_db=float(band_psnr(a, b).mean()),
        ssim=float(band_ssim(a, b).mean()),
        sam_degrees=float(np.degrees(pixel_sam_radians(a, b)).mean()),
        constant_bands=flat,
    )
