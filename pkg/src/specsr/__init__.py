"""SRF-guided unrolled network for recovering hyperspectral cubes from multispectral images."""

from .spectral import (
    BandGroup,
    BandGrouping,
    DegradationOperator,
    SpectralCube,
    Srf,
    apply_adjoint,
    apply_degradation,
    build_phi,
    group_bands,
    pseudo_inverse,
    spectral_gradient_cube,
)
from .network import HsrnetConfig, ParamStore, hsrnet_forward, init_params
from .hqs import HqsConfig, solve_hqs
from .losses import LossConfig, loss_fast, loss_reference
from .metrics import MetricsReport, metrics
from .train import TrainConfig, train

__all__ = [
    "BandGroup",
    "BandGrouping",
    "DegradationOperator",
    "HqsConfig",
    "HsrnetConfig",
    "LossConfig",
    "MetricsReport",
    "ParamStore",
    "SpectralCube",
    "Srf",
    "TrainConfig",
    "apply_adjoint",
    "apply_degradation",
    "build_phi",
    "group_bands",
    "hsrnet_forward",
    "init_params",
    "loss_fast",
    "loss_reference",
    "metrics",
    "pseudo_inverse",
    "solve_hqs",
    "spectral_gradient_cube",
    "train",
]
