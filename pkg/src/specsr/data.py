"""Patch tiling and dihedral augmentation of aligned MSI/HSI pairs."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError
from .spectral import SpectralCube


def _arr(c):
    return c.data if isinstance(c, SpectralCube) else np.asarray(c, dtype=np.float32)


def extract_patches(cube, patch_size: int) -> list[np.ndarray]:
    """Non-overlapping row-major tiles from the top-left; partial edge tiles are dropped."""
    data = _arr(cube)
    _, h, w = data.shape
    if patch_size < 1 or patch_size > h or patch_size > w:
        raise ShapeError(f"patch {patch_size} does not fit a {h}x{w} cube")
    return [
        data[:, r:r + patch_size, c:c + patch_size].copy()
        for r in range(0, h - patch_size + 1, patch_size)
        for c in range(0, w - patch_size + 1, patch_size)
    ]


def dihedral(a: np.ndarray, k: int) -> np.ndarray:
    """Element ``k`` (0..7) of the square's symmetry group acting on [C, H, W]:
    k < 4 rotates by 90*k degrees, k >= 4 flips left-right and then rotates by 90*(k-4)."""
    if k >= 4:
        a = a[:, :, ::-1]
    return np.ascontiguousarray(np.rot90(a, k % 4, axes=(1, 2)))


def augment8(msi, hsi) -> list[tuple[np.ndarray, np.ndarray]]:
    m, h = _arr(msi), _arr(hsi)
    if m.shape[1] != m.shape[2] or h.shape[1:] != m.shape[1:]:
        raise ShapeError(f"augment8 needs aligned square patches, got {m.shape} and {h.shape}")
    return [(dihedral(m, k), dihedral(h, k)) for k in range(8)]


def training_samples(pairs, patch_size: int, augment: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for msi, hsi in pairs:
        for pm, ph in zip(extract_patches(msi, patch_size), extract_patches(hsi, patch_size)):
            out.extend(augment8(pm, ph) if augment else [(pm, ph)])
    return out
