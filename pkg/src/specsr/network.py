"""Unfolded spectral super-resolution network.

Layout of one forward pass::

    x0  = IRN(y)                                   grouped heads guided by the SRF
    x_k = T(x_{k-1}) + w_eps * x0 + w_epsmu * SSN(x_{k-1}),   k = 1..K

``w_eps`` and ``w_epsmu`` are per-channel weights from two channel-attention
blocks per stage (or two learnable scalars when attention is disabled).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .spectral import BandGrouping, SpectralCube, spectral_gradient_cube


@dataclass
class HsrnetConfig:
    hs_channels: int
    ms_channels: int
    grouping: BandGrouping
    stages: int = 3
    irn_features: int = 64
    ssn_features_wide: int = 64
    ssn_features_narrow: int = 32
    cam_reduction: int = 4
    seed: int = 0
    use_cam: bool = True
    use_srf_grouping: bool = True
    hs_wavelengths_nm: list[float] | None = None

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if min(self.irn_features, self.ssn_features_wide, self.ssn_features_narrow, self.cam_reduction) < 1:
            raise ValueError("feature counts and cam_reduction must be >= 1")
        if not self.hs_channels >= self.ms_channels >= 2:
            raise ValueError(f"need C >= c >= 2, got C={self.hs_channels}, c={self.ms_channels}")
        self.grouping.validate(self.hs_channels)
        if self.hs_wavelengths_nm is not None and len(self.hs_wavelengths_nm) != self.hs_channels:
            raise ValueError("hs_wavelengths_nm length must equal hs_channels")

    @property
    def cam_hidden(self) -> int:
        return math.ceil(self.hs_channels / self.cam_reduction)

    def to_json(self) -> dict:
        return {
            "hs_channels": self.hs_channels,
            "ms_channels": self.ms_channels,
            "grouping": self.grouping.to_json(),
            "stages": self.stages,
            "irn_features": self.irn_features,
            "ssn_features_wide": self.ssn_features_wide,
            "ssn_features_narrow": self.ssn_features_narrow,
            "cam_reduction": self.cam_reduction,
            "seed": self.seed,
            "use_cam": self.use_cam,
            "use_srf_grouping": self.use_srf_grouping,
            "hs_wavelengths_nm": None if self.hs_wavelengths_nm is None else [float(w) for w in self.hs_wavelengths_nm],
        }

    @classmethod
    def from_json(cls, d: dict) -> HsrnetConfig:
        d = dict(d)
        d["grouping"] = BandGrouping.from_json(d["grouping"])
        return cls(**d)


class ParamStore:
    """Ordered mapping of hierarchical names to learnable tensors."""

    def __init__(self, tensors=None):
        self._t: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, value) -> Tensor:
        if name in self._t:
            raise KeyError(f"duplicate parameter {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._t[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name) -> bool:
        return name in self._t

    def __len__(self):
        return len(self._t)

    def __iter__(self):
        return iter(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    def tensors(self) -> list[Tensor]:
        return list(self._t.values())

    def num_values(self) -> int:
        return sum(t.size for t in self._t.values())

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def copy(self) -> ParamStore:
        return ParamStore({n: Tensor(t.data) for n, t in self._t.items()})

    def namespaces(self) -> set[str]:
        return {n.split(".", 1)[0] for n in self._t}

    def equal(self, other: ParamStore) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[n].data, other[n].data) for n in self.names()
        )


def layer_shapes(cfg: HsrnetConfig) -> OrderedDict:
    """Every parameter name with its shape, in creation order."""
    shapes = OrderedDict()
    c_in = 2 * cfg.ms_channels - 1
    f = cfg.irn_features
    C = cfg.hs_channels

    def conv(prefix, fo, fi, k):
        shapes[f"{prefix}.kernel"] = (fo, fi, k, k)
        shapes[f"{prefix}.bias"] = (fo,)

    conv("irn.conv1", f, c_in, 3)
    if cfg.use_srf_grouping:
        for g, grp in enumerate(cfg.grouping.groups):
            conv(f"irn.group{g}", len(grp.hs_band_indices), f, 3)
    else:
        conv("irn.head", C, f, 3)
    for k in range(1, cfg.stages + 1):
        s = f"stage{k}"
        conv(f"{s}.T", C, C, 3)
        conv(f"{s}.ssn.conv1", cfg.ssn_features_wide, C, 3)
        conv(f"{s}.ssn.conv2", cfg.ssn_features_narrow, cfg.ssn_features_wide, 3)
        conv(f"{s}.ssn.conv3", C, cfg.ssn_features_narrow, 1)
        if cfg.use_cam:
            for cam in ("cam_eps", "cam_epsmu"):
                conv(f"{s}.{cam}.conv1", cfg.cam_hidden, C, 1)
                conv(f"{s}.{cam}.conv2", C, cfg.cam_hidden, 1)
        else:
            shapes[f"{s}.eps.scale"] = (1,)
            shapes[f"{s}.epsmu.scale"] = (1,)
    return shapes


def init_params(cfg: HsrnetConfig) -> ParamStore:
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    for name, shape in layer_shapes(cfg).items():
        if name.endswith(".bias"):
            value = np.zeros(shape)
        elif name.endswith(".scale"):
            value = np.full(shape, 0.5)
        elif name.endswith("T.kernel"):
            value = rng.uniform(-1e-3, 1e-3, shape)
            centre = shape[2] // 2
            value[np.arange(shape[0]), np.arange(shape[1]), centre, centre] += 1.0
        else:
            fo, fi, kh, kw = shape
            limit = math.sqrt(6.0 / (fi * kh * kw + fo * kh * kw))
            value = rng.uniform(-limit, limit, shape)
        store.add(name, value.astype(np.float32))
    return store


def _conv(x, params, prefix):
    return ad.conv2d(x, params[f"{prefix}.kernel"], params[f"{prefix}.bias"])


def _as_input(y) -> Tensor:
    if isinstance(y, Tensor):
        return y
    if isinstance(y, SpectralCube):
        return Tensor(y.data)
    return Tensor(np.asarray(y, dtype=np.float32))


def irn_forward(y, params: ParamStore, grouping: BandGrouping | None, hs_channels: int | None = None) -> Tensor:
    """Initial restoration from the spectral-gradient cube.

    With ``grouping`` each group of bands gets its own 3x3 head; with
    ``grouping=None`` a single head produces every band.
    """
    y_arr = y.data if isinstance(y, (SpectralCube, Tensor)) else np.asarray(y, dtype=np.float32)
    feats = ad.relu(_conv(Tensor(spectral_gradient_cube(y_arr)), params, "irn.conv1"))
    if grouping is None:
        return _conv(feats, params, "irn.head")
    n = grouping.num_bands
    if hs_channels is not None and n != hs_channels:
        raise ShapeError(f"grouping covers {n} bands, config has {hs_channels}")
    grouping.validate(n)
    heads = []
    order = []
    for g, grp in enumerate(grouping.groups):
        out = _conv(feats, params, f"irn.group{g}")
        if out.shape[0] != len(grp.hs_band_indices):
            raise ShapeError(f"group {g} head emits {out.shape[0]} bands, group has {len(grp.hs_band_indices)}")
        heads.append(out)
        order.extend(grp.hs_band_indices)
    stacked = ad.concat_channels(heads)
    # stacked channel i holds band order[i]; invert to put band j at channel j
    inverse = np.argsort(np.asarray(order))
    return ad.gather_channels(stacked, inverse)


def ssn_forward(x: Tensor, params: ParamStore, prefix: str = "") -> Tensor:
    p = prefix + "ssn" if prefix else "ssn"
    k1 = params[f"{p}.conv1.kernel"]
    if x.shape[0] != k1.shape[1]:
        raise ShapeError(f"SSN expects {k1.shape[1]} channels, got {x.shape[0]}")
    h = ad.relu(_conv(x, params, f"{p}.conv1"))
    h = ad.relu(_conv(h, params, f"{p}.conv2"))
    h = _conv(h, params, f"{p}.conv3")
    return ad.add(h, x)


def cam_forward(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Channel weights in (0, 1), shape [C]."""

    def shared(pooled):
        h = ad.relu(_conv(pooled, params, f"{prefix}.conv1"))
        return _conv(h, params, f"{prefix}.conv2")

    logits = ad.add(shared(ad.global_pool(x, "max")), shared(ad.global_pool(x, "mean")))
    return ad.reshape(ad.sigmoid(logits), (x.shape[0],))


def stage_terms(x_k: Tensor, x0: Tensor, params: ParamStore, stage: int, use_cam: bool = True):
    """The three summands of one stage: T(x_k), w_eps * x0, w_epsmu * SSN(x_k)."""
    if x_k.shape != x0.shape:
        raise ShapeError(f"stage input {x_k.shape} does not match x0 {x0.shape}")
    s = f"stage{stage}"
    transformed = _conv(x_k, params, f"{s}.T")
    prior = ssn_forward(x_k, params, f"{s}.")
    if use_cam:
        w_eps = cam_forward(x0, params, f"{s}.cam_eps")
        w_epsmu = cam_forward(prior, params, f"{s}.cam_epsmu")
        init_term = ad.channel_scale(x0, w_eps)
        prior_term = ad.channel_scale(prior, w_epsmu)
    else:
        init_term = ad.scalar_mul(x0, params[f"{s}.eps.scale"])
        prior_term = ad.scalar_mul(prior, params[f"{s}.epsmu.scale"])
    return transformed, init_term, prior_term


def stage_forward(x_k: Tensor, x0: Tensor, params: ParamStore, stage: int, use_cam: bool = True) -> Tensor:
    t, a, b = stage_terms(x_k, x0, params, stage, use_cam)
    return ad.add(ad.add(t, a), b)


def hsrnet_graph(y, cfg: HsrnetConfig, params: ParamStore) -> Tensor:
    """Differentiable forward pass; returns the [C, H, W] estimate as a Tensor."""
    y_arr = y.data if isinstance(y, (SpectralCube, Tensor)) else np.asarray(y, dtype=np.float32)
    if y_arr.shape[0] != cfg.ms_channels:
        raise ShapeError(f"input has {y_arr.shape[0]} bands, model expects {cfg.ms_channels}")
    grouping = cfg.grouping if cfg.use_srf_grouping else None
    x0 = irn_forward(y_arr, params, grouping, cfg.hs_channels)
    x = x0
    for k in range(1, cfg.stages + 1):
        x = stage_forward(x, x0, params, k, cfg.use_cam)
    return x


def hsrnet_forward(y, cfg: HsrnetConfig, params: ParamStore) -> SpectralCube:
    out = hsrnet_graph(y, cfg, params)
    return SpectralCube(out.data.copy(), cfg.hs_wavelengths_nm)
