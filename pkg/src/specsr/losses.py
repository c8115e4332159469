"""L1 + spectral-angle losses.

``loss_reference`` walks pixels one at a time and computes the angle with
arccos of the normalized inner product. ``loss_fast`` rewrites the angle
through unit-normalized spectra, ``a.b = 1 - |a - b|^2 / 2``, so the whole
loss is a handful of bulk array operations with a closed-form gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

# floor on 1 - q^2 in the arccos derivative; caps the slope at 1e4 near q = +-1
_ACOS_SLOPE_FLOOR = 1e-8


@dataclass
class LossConfig:
    alpha: float = 1e-4
    norm_epsilon: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _arrays(xhat, x):
    a = xhat.data if isinstance(xhat, Tensor) else np.asarray(xhat, dtype=np.float32)
    b = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"loss operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def loss_reference(xhat, x, cfg: LossConfig = LossConfig()) -> float:
    """Per-pixel loop evaluation; returns a Python float."""
    a, b = _arrays(xhat, x)
    c, h, w = a.shape
    l1 = float(np.mean(np.abs(a.astype(np.float64) - b)))
    total = 0.0
    for i in range(h):
        for j in range(w):
            u = a[:, i, j].astype(np.float64)
            v = b[:, i, j].astype(np.float64)
            cos = float(u @ v) / (math.sqrt(float(u @ u)) * math.sqrt(float(v @ v)) + cfg.norm_epsilon)
            total += math.acos(min(1.0, max(-1.0, cos)))
    return l1 + cfg.alpha * total / (h * w)


def loss_fast(xhat: Tensor, x, cfg: LossConfig = LossConfig()) -> Tensor:
    """Differentiable bulk form; the gradient flows to ``xhat`` only."""
    a32, b32 = _arrays(xhat, x)
    a = a32.astype(np.float64)
    b = b32.astype(np.float64)
    c, h, w = a.shape
    n_all = a.size
    n_pix = h * w

    diff = a - b
    ad._log_kink(diff > 0)
    l1 = np.abs(diff).sum() / n_all

    norm_a = np.sqrt((a * a).sum(axis=0))
    denom_a = norm_a + cfg.norm_epsilon
    ua = a / denom_a
    ub = b / (np.sqrt((b * b).sum(axis=0)) + cfg.norm_epsilon)
    du = ua - ub
    q = 1.0 - 0.5 * (du * du).sum(axis=0)
    inside = (q > -1.0) & (q < 1.0)
    qc = np.clip(q, -1.0, 1.0)
    ad._log_kink(inside)
    sam = np.arccos(qc).sum() / n_pix
    value = l1 + cfg.alpha * sam

    def grad_fn(g):
        gs = float(g.reshape(-1)[0])
        g_l1 = np.sign(diff) / n_all
        dq = np.where(inside, -1.0 / np.sqrt(np.maximum(1.0 - qc * qc, _ACOS_SLOPE_FLOOR)), 0.0) / n_pix
        # d q / d ua = -(ua - ub); chain through ua = a / (|a| + eps)
        v = -du * dq
        safe = np.where(norm_a > 0, norm_a, 1.0)
        proj = (a * v).sum(axis=0) / (denom_a * denom_a * safe)
        g_ua = v / denom_a - a * np.where(norm_a > 0, proj, 0.0)
        return (gs * (g_l1 + cfg.alpha * g_ua)).astype(np.float32), None

    if not isinstance(xhat, Tensor):
        xhat = Tensor(a32)
    target = x if isinstance(x, Tensor) else Tensor(b32)
    return ad.custom_op("loss_fast", np.array([value]), (xhat, target), grad_fn)


def batch_loss(outputs, targets, cfg: LossConfig) -> Tensor:
    """Mean of per-sample ``loss_fast`` values."""
    losses = [loss_fast(o, t, cfg) for o, t in zip(outputs, targets)]
    total = losses[0]
    for extra in losses[1:]:
        total = ad.add(total, extra)
    return ad.scale(total, 1.0 / len(losses))
