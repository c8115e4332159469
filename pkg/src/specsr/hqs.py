"""Half-quadratic splitting baseline with a gradient-descent data step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError
from .spectral import DegradationOperator, SpectralCube, apply_adjoint, apply_degradation

DTYPE = np.float32


class HqsConfigError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass
class HqsConfig:
    epsilon: float = 1.0
    mu: float = 0.0
    lam: float = 0.0  # prior weight, gamma / mu
    max_iters: int = 1000
    tol: float = 1e-7
    prior: str = "identity"  # or "spatial_spectral_smoothing"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise HqsConfigError("epsilon must be > 0")
        if self.mu < 0 or self.lam < 0:
            raise HqsConfigError("mu and lambda must be >= 0")
        if self.max_iters < 1:
            raise HqsConfigError("max_iters must be positive")
        if self.prior not in ("identity", "spatial_spectral_smoothing"):
            raise HqsConfigError(f"unknown prior {self.prior!r}")


@dataclass
class HqsResult:
    x: SpectralCube
    fidelity: list[float] = field(default_factory=list)  # ||phi x - y||^2 after each iteration
    update_norm: list[float] = field(default_factory=list)  # ||x_new - x|| / ||x||
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.fidelity)


def spectral_norm_sq(phi: DegradationOperator, steps: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of phi^T phi by power iteration."""
    m = phi.matrix.astype(np.float64)
    g = m.T @ m
    v = np.random.default_rng(seed).standard_normal(g.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(steps):
        w = g @ v
        lam = float(v @ w)
        n = np.linalg.norm(w)
        if n == 0:
            return 0.0
        v = w / n
    return lam


def check_stability(phi: DegradationOperator, cfg: HqsConfig) -> float:
    sigma = spectral_norm_sq(phi)
    bound = cfg.epsilon * (cfg.mu + sigma)
    if bound >= 2:
        raise HqsConfigError(f"unstable step: epsilon*(mu + sigma_max) = {bound:.4g} >= 2")
    return sigma


def hqs_x_step(x, h, y, phi: DegradationOperator, epsilon: float, mu: float) -> SpectralCube:
    """One gradient step on ||y - phi x||^2 + mu ||h - x||^2 (in the 1/2-scaled form)."""
    xd = _data(x)
    hd = _data(h)
    if xd.shape != hd.shape or xd.shape[0] != phi.hs_channels or _data(y).shape[1:] != xd.shape[1:]:
        raise ShapeError(f"inconsistent shapes x={xd.shape} h={hd.shape} y={_data(y).shape}")
    xc = SpectralCube(xd)
    resid = apply_degradation(phi, xc).data - _data(y)
    grad = apply_adjoint(phi, SpectralCube(resid)).data + mu * (xd - hd)
    return SpectralCube((xd - epsilon * grad).astype(DTYPE), phi.hs_wavelengths_nm)


def _box3(x):
    # 3x3 spatial mean with edge replication
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = x.shape[1:]
    acc = np.zeros_like(x, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            acc += p[:, dy:dy + h, dx:dx + w]
    return acc / 9.0


def _spectral3(x):
    p = np.pad(x, ((1, 1), (0, 0), (0, 0)), mode="edge")
    return 0.25 * p[:-2] + 0.5 * p[1:-1] + 0.25 * p[2:]


def denoise_prior(x, lam: float, prior: str = "spatial_spectral_smoothing") -> SpectralCube:
    if lam < 0:
        raise HqsConfigError("lambda must be >= 0")
    xd = _data(x)
    if prior == "identity" or lam == 0:
        return SpectralCube(xd.copy(), getattr(x, "wavelengths_nm", None))
    if prior != "spatial_spectral_smoothing":
        raise HqsConfigError(f"unknown prior {prior!r}")
    s = _spectral3(_box3(xd.astype(np.float64)))
    out = (xd + lam * s) / (1.0 + lam)
    return SpectralCube(out.astype(DTYPE), getattr(x, "wavelengths_nm", None))


def solve_hqs(y: SpectralCube, phi: DegradationOperator, cfg: HqsConfig) -> HqsResult:
    check_stability(phi, cfg)
    yd = _data(y)
    if yd.shape[0] != phi.ms_channels:
        raise ShapeError(f"MSI has {yd.shape[0]} bands, operator expects {phi.ms_channels}")
    x = apply_adjoint(phi, SpectralCube(yd))
    result = HqsResult(x)
    for _ in range(cfg.max_iters):
        h = denoise_prior(x, cfg.lam, cfg.prior)
        x_new = hqs_x_step(x, h, yd, phi, cfg.epsilon, cfg.mu)
        if not np.all(np.isfinite(x_new.data)):
            raise DivergenceError(f"non-finite iterate at iteration {result.iterations + 1}")
        diff = x_new.data.astype(np.float64) - x.data
        denom = max(float(np.linalg.norm(x.data)), 1e-30)
        upd = float(np.linalg.norm(diff)) / denom
        x = x_new
        resid = apply_degradation(phi, x).data.astype(np.float64) - yd
        result.fidelity.append(float(np.sum(resid * resid)))
        result.update_norm.append(upd)
        if upd < cfg.tol:
            result.converged = True
            break
    result.x = x
    return result


def normal_residual(phi: DegradationOperator, x, y) -> float:
    """||phi^T phi x - phi^T y||, computed in float64."""
    m = phi.matrix.astype(np.float64)
    xd = _data(x).astype(np.float64)
    yd = _data(y).astype(np.float64)
    c, h, w = xd.shape
    xf = xd.reshape(c, -1)
    yf = yd.reshape(yd.shape[0], -1)
    return float(np.linalg.norm(m.T @ (m @ xf) - m.T @ yf))


def _data(a):
    return a.data if isinstance(a, SpectralCube) else np.asarray(a, dtype=DTYPE)
