"""Synthetic hyperspectral scenes from a linear mixing model."""

from __future__ import annotations

import numpy as np

from .spectral import SpectralCube


def endmember_library(rng: np.random.Generator, channels: int, n_endmembers: int) -> np.ndarray:
    """[n_endmembers, C] spectra, each a sum of 2-3 Gaussian bumps rescaled to [0.05, 0.95]."""
    axis = np.arange(channels, dtype=np.float64)
    lib = np.empty((n_endmembers, channels))
    for e in range(n_endmembers):
        s = np.zeros(channels)
        for _ in range(rng.integers(2, 4)):
            centre = rng.uniform(-0.1, 1.1) * (channels - 1)
            width = rng.uniform(0.1, 0.35) * channels
            s += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((axis - centre) / width) ** 2)
        span = s.max() - s.min()
        s = (s - s.min()) / span if span > 0 else np.full(channels, 0.5)
        lib[e] = 0.05 + 0.9 * s
    return lib


def box_smooth(field: np.ndarray, passes: int) -> np.ndarray:
    """Repeated 3x3 mean filter with reflected borders over the last two axes."""
    h, w = field.shape[-2:]
    for _ in range(passes):
        p = np.pad(field, [(0, 0)] * (field.ndim - 2) + [(1, 1), (1, 1)], mode="reflect")
        acc = np.zeros_like(field)
        for dy in range(3):
            for dx in range(3):
                acc += p[..., dy:dy + h, dx:dx + w]
        field = acc / 9.0
    return field


def abundance_maps(rng, n_endmembers, height, width, smooth_passes=6, sharpness=4.0) -> np.ndarray:
    """[n, H, W] per-pixel fractions summing to 1 (softmax of smoothed noise)."""
    field = box_smooth(rng.standard_normal((n_endmembers, height, width)), smooth_passes)
    field = field / (field.std() + 1e-12) * sharpness
    field -= field.max(axis=0, keepdims=True)
    e = np.exp(field)
    return e / e.sum(axis=0, keepdims=True)


def synth_scene(seed: int, width: int, height: int, channels: int, n_endmembers: int,
                wavelengths_nm=None, library_seed: int | None = None, return_parts: bool = False):
    """Ground-truth HSI with values in [0.05, 0.95].

    ``library_seed`` draws the endmembers from a separate stream so several
    scenes can share one material library while their layouts differ.
    """
    if n_endmembers < 2:
        raise ValueError("n_endmembers must be >= 2")
    rng = np.random.default_rng(seed)
    lib_rng = rng if library_seed is None else np.random.default_rng(library_seed)
    lib = endmember_library(lib_rng, channels, n_endmembers)
    abund = abundance_maps(rng, n_endmembers, height, width)
    cube = np.einsum("ec,ehw->chw", lib, abund)
    scene = SpectralCube(np.clip(cube, 0.0, 1.0).astype(np.float32), wavelengths_nm)
    if return_parts:
        return scene, lib, abund
    return scene
