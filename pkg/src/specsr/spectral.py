"""Spectral degradation model: SRFs, the degradation matrix, and band grouping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError

DTYPE = np.float32


class DegenerateSrfError(ValueError):
    """An SRF band (or the whole SRF) does not respond on the hyperspectral grid."""


class InsufficientBandsError(ValueError):
    pass


@dataclass
class SpectralCube:
    """Planar band-major raster: ``data[band, row, col]``."""

    data: np.ndarray
    wavelengths_nm: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=DTYPE)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"cube data must be [C,H,W] with positive extents, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube data must be finite")
        if self.wavelengths_nm is not None:
            wl = np.asarray(self.wavelengths_nm, dtype=DTYPE)
            if wl.shape != (self.channels,):
                raise ShapeError(f"{wl.size} wavelengths for {self.channels} channels")
            if np.any(np.diff(wl) <= 0):
                raise ValueError("wavelengths_nm must be strictly ascending")
            self.wavelengths_nm = wl

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class Srf:
    sample_wavelengths_nm: np.ndarray
    responses: np.ndarray  # [num_samples, num_ms_bands]
    band_names: list[str] | None = None

    def __post_init__(self):
        self.sample_wavelengths_nm = np.asarray(self.sample_wavelengths_nm, dtype=np.float64)
        self.responses = np.asarray(self.responses, dtype=np.float64)
        if self.responses.ndim != 2 or self.responses.shape[0] != self.sample_wavelengths_nm.size:
            raise ShapeError(
                f"responses {self.responses.shape} do not match {self.sample_wavelengths_nm.size} samples"
            )
        if np.any(np.diff(self.sample_wavelengths_nm) <= 0):
            raise ValueError("SRF wavelengths must be strictly ascending")
        if np.any(self.responses < 0):
            raise ValueError("SRF responses must be nonnegative")
        dead = np.flatnonzero(~np.any(self.responses > 0, axis=0))
        if dead.size:
            raise DegenerateSrfError(f"SRF band(s) {dead.tolist()} have no positive sample")

    @property
    def num_bands(self) -> int:
        return self.responses.shape[1]

    def sample(self, wavelengths_nm) -> np.ndarray:
        """Linearly interpolated responses at ``wavelengths_nm``; zero outside the sampled range.

        Returns [len(wavelengths), num_bands].
        """
        wl = np.asarray(wavelengths_nm, dtype=np.float64)
        return np.stack(
            [np.interp(wl, self.sample_wavelengths_nm, self.responses[:, b], left=0.0, right=0.0) for b in range(self.num_bands)],
            axis=1,
        )


@dataclass
class DegradationOperator:
    """Row-stochastic c x C matrix taking an HS spectrum to MS measurements."""

    matrix: np.ndarray
    hs_wavelengths_nm: np.ndarray
    raw_response: np.ndarray | None = field(default=None, repr=False)  # unnormalized, [c, C]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=DTYPE)
        self.hs_wavelengths_nm = np.asarray(self.hs_wavelengths_nm, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.hs_wavelengths_nm.size:
            raise ShapeError(f"matrix {self.matrix.shape} vs {self.hs_wavelengths_nm.size} HS wavelengths")
        if self.raw_response is None:
            self.raw_response = self.matrix.astype(np.float64)

    @property
    def ms_channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def hs_channels(self) -> int:
        return self.matrix.shape[1]


@dataclass
class BandGroup:
    hs_band_indices: tuple[int, ...]
    coverage_signature: frozenset[int]


@dataclass
class BandGrouping:
    groups: list[BandGroup]

    @property
    def num_bands(self) -> int:
        return sum(len(g.hs_band_indices) for g in self.groups)

    def validate(self, num_bands: int) -> None:
        seen = sorted(i for g in self.groups for i in g.hs_band_indices)
        if seen != list(range(num_bands)):
            raise ShapeError(f"grouping does not partition {num_bands} bands")

    def to_json(self) -> list:
        return [
            {"bands": list(g.hs_band_indices), "signature": sorted(g.coverage_signature)} for g in self.groups
        ]

    @classmethod
    def from_json(cls, items) -> BandGrouping:
        return cls([BandGroup(tuple(int(i) for i in it["bands"]), frozenset(int(s) for s in it["signature"])) for it in items])

    @classmethod
    def single(cls, num_bands: int) -> BandGrouping:
        return cls([BandGroup(tuple(range(num_bands)), frozenset())])


def build_phi(srf: Srf, hs_wavelengths_nm) -> DegradationOperator:
    hs = np.asarray(hs_wavelengths_nm, dtype=np.float64)
    raw = srf.sample(hs).T  # [c, C]
    sums = raw.sum(axis=1)
    dead = np.flatnonzero(sums <= 0)
    if dead.size:
        raise DegenerateSrfError(f"MS band(s) {dead.tolist()} have zero response at every HS wavelength")
    return DegradationOperator(raw / sums[:, None], hs, raw_response=raw)


def apply_degradation(phi: DegradationOperator, x: SpectralCube) -> SpectralCube:
    if x.channels != phi.hs_channels:
        raise ShapeError(f"cube has {x.channels} bands, operator expects {phi.hs_channels}")
    c, h, w = x.data.shape
    y = (phi.matrix @ x.data.reshape(c, h * w)).reshape(phi.ms_channels, h, w)
    return SpectralCube(y)


def apply_adjoint(phi: DegradationOperator, y: SpectralCube) -> SpectralCube:
    if y.channels != phi.ms_channels:
        raise ShapeError(f"cube has {y.channels} bands, operator expects {phi.ms_channels}")
    c, h, w = y.data.shape
    x = (phi.matrix.T @ y.data.reshape(c, h * w)).reshape(phi.hs_channels, h, w)
    return SpectralCube(x, phi.hs_wavelengths_nm)


def spectral_gradient_cube(y: SpectralCube | np.ndarray) -> np.ndarray:
    """Bands followed by adjacent differences ``y[i+1] - y[i]``: [2c-1, H, W]."""
    data = y.data if isinstance(y, SpectralCube) else np.asarray(y, dtype=DTYPE)
    if data.shape[0] < 2:
        raise InsufficientBandsError("spectral gradients need at least 2 bands")
    return np.concatenate([data, np.diff(data, axis=0)], axis=0).astype(DTYPE)


def coverage_sets(phi: DegradationOperator, tau: float = 0.01) -> list[frozenset[int]]:
    """For each HS band, the MS bands responding at >= tau of their peak."""
    raw = np.asarray(phi.raw_response, dtype=np.float64)
    peak = raw.max(axis=1, keepdims=True)
    covered = raw >= tau * peak
    covered &= raw > 0
    return [frozenset(np.flatnonzero(covered[:, j]).tolist()) for j in range(raw.shape[1])]


def group_bands(phi: DegradationOperator, tau: float = 0.01) -> BandGrouping:
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    sets = coverage_sets(phi, tau)
    wl = np.asarray(phi.hs_wavelengths_nm, dtype=np.float64)
    covered = [j for j, s in enumerate(sets) if s]
    if not covered:
        raise DegenerateSrfError("no HS band is covered by any MS band")
    cov_wl = wl[covered]
    sig = list(sets)
    for j, s in enumerate(sets):
        if s:
            continue
        # rounding absorbs float noise on evenly spaced grids; argmin then breaks ties low
        dist = np.round(np.abs(cov_wl - wl[j]), 6)
        sig[j] = sets[covered[int(np.argmin(dist))]]

    order: dict[frozenset, list[int]] = {}
    for j, s in enumerate(sig):
        order.setdefault(s, []).append(j)
    groups = [BandGroup(tuple(idx), s) for s, idx in order.items()]
    groups.sort(key=lambda g: g.hs_band_indices[0])
    return BandGrouping(groups)


def pseudo_inverse(phi: DegradationOperator, y: SpectralCube) -> SpectralCube:
    """Per-pixel minimum-norm solution ``phi^T (phi phi^T)^-1 y``."""
    m = phi.matrix.astype(np.float64)
    pinv = m.T @ np.linalg.inv(m @ m.T)
    c, h, w = y.data.shape
    x = (pinv @ y.data.reshape(c, h * w).astype(np.float64)).reshape(phi.hs_channels, h, w)
    return SpectralCube(x.astype(DTYPE), phi.hs_wavelengths_nm)


# --- bundled response curves ----------------------------------------------------------

CAVE_WAVELENGTHS = np.arange(400.0, 701.0, 10.0)


def gaussian_srf(centers_nm, sigmas_nm, start=380.0, stop=720.0, step=1.0, names=None) -> Srf:
    wl = np.arange(start, stop + step / 2, step)
    resp = np.exp(-0.5 * ((wl[:, None] - np.asarray(centers_nm)[None, :]) / np.asarray(sigmas_nm)[None, :]) ** 2)
    return Srf(wl, resp, names)


def cave_like_srf() -> Srf:
    """Three broad blue/green/red Gaussian bands sampled every 1 nm over 380-720 nm.

    At the default 1% coverage threshold on the 400-700 nm, 10 nm grid, blue
    reaches 550 nm, green starts at 460 nm and red starts at 560 nm, giving a
    blue-only, a blue+green and a green+red range.
    """
    return gaussian_srf([450.0, 580.0, 650.0], [34.6, 41.2, 31.3], names=["blue", "green", "red"])


def sentinel2_like_srf() -> Srf:
    """Four narrow-ish box-shaped bands (B2, B3, B4, B8-like) leaving spectral gaps.

    Paired with :func:`ohs_like_wavelengths`, HS bands between the passbands
    are uncovered and must be absorbed by nearest-wavelength fallback.
    """
    wl = np.arange(400.0, 1001.0, 1.0)
    bands = [(458.0, 523.0), (543.0, 578.0), (650.0, 680.0), (785.0, 900.0)]
    resp = np.zeros((wl.size, len(bands)))
    for b, (lo, hi) in enumerate(bands):
        resp[(wl >= lo) & (wl <= hi), b] = 1.0
    return Srf(wl, resp, ["B2", "B3", "B4", "B8"])


def ohs_like_wavelengths(n: int = 32) -> np.ndarray:
    return np.linspace(466.0, 940.0, n)
