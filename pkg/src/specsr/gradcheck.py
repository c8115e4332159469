"""Finite-difference verification of every differentiable primitive and the full network."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import LossConfig, loss_fast
from .network import HsrnetConfig, hsrnet_graph, init_params
from .spectral import BandGroup, BandGrouping

PRIMITIVE_TOL = 1e-2
NETWORK_TOL = 2e-2
STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    coords: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.coords > 0 and self.max_rel_err < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<22} max_rel_err={self.max_rel_err:.3e} coords={self.coords} tol={self.tol:g}"


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    small = np.abs(x) < margin
    x[small] = np.sign(x[small] + 1e-30) * (margin + rng.uniform(0, 1, small.sum()))
    return x


def _projected(build: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    # random linear read-out keeps the scalar loss sensitive to every output entry
    probe = build()
    weights = Tensor(rng.standard_normal(probe.shape))
    return lambda: ad.sum_all(ad.mul(build(), weights))


def _run(name, build, leaves, rng, tol=PRIMITIVE_TOL, coords=None, project=True) -> CheckResult:
    fn = _projected(build, rng) if project else build
    rows = ad.check_gradients(fn, leaves, rng, coords_per_tensor=coords, step=STEP)
    worst = max((r[4] for r in rows), default=np.inf)
    return CheckResult(name, worst, len(rows), tol)


def leaf(rng, shape, away=False) -> Tensor:
    data = _away_from_zero(rng, shape) if away else rng.standard_normal(shape)
    return Tensor(data, requires_grad=True)


def primitive_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    x, k, b = leaf(rng, (2, 4, 4)), leaf(rng, (3, 2, 3, 3)), leaf(rng, (3,))
    out.append(_run("conv2d_3x3", lambda: ad.conv2d(x, k, b), {"input": x, "kernel": k, "bias": b}, rng))
    x1, k1, b1 = leaf(rng, (3, 5, 5)), leaf(rng, (2, 3, 1, 1)), leaf(rng, (2,))
    out.append(_run("conv2d_1x1", lambda: ad.conv2d(x1, k1, b1), {"input": x1, "kernel": k1, "bias": b1}, rng))
    r = leaf(rng, (3, 4, 4), away=True)
    out.append(_run("relu", lambda: ad.relu(r), {"x": r}, rng))
    s = leaf(rng, (3, 4, 4))
    out.append(_run("sigmoid", lambda: ad.sigmoid(s), {"x": s}, rng))
    pm = leaf(rng, (3, 4, 5))
    out.append(_run("global_pool_max", lambda: ad.global_pool(pm, "max"), {"x": pm}, rng))
    pa = leaf(rng, (3, 4, 5))
    out.append(_run("global_pool_mean", lambda: ad.global_pool(pa, "mean"), {"x": pa}, rng))
    a, c = leaf(rng, (2, 3, 3)), leaf(rng, (2, 3, 3))
    out.append(_run("add", lambda: ad.add(a, c), {"a": a, "b": c}, rng))
    out.append(_run("mul", lambda: ad.mul(a, c), {"a": a, "b": c}, rng))
    out.append(_run("scale", lambda: ad.scale(a, -1.7), {"a": a}, rng))
    cx, cw = leaf(rng, (3, 4, 4)), leaf(rng, (3,))
    out.append(_run("channel_scale", lambda: ad.channel_scale(cx, cw), {"x": cx, "w": cw}, rng))
    sx, sv = leaf(rng, (2, 3, 3)), leaf(rng, (1,))
    out.append(_run("scalar_mul", lambda: ad.scalar_mul(sx, sv), {"x": sx, "s": sv}, rng))
    p1, p2 = leaf(rng, (2, 3, 3)), leaf(rng, (1, 3, 3))
    out.append(_run("concat_channels", lambda: ad.concat_channels([p1, p2]), {"p1": p1, "p2": p2}, rng))
    g = leaf(rng, (4, 2, 2))
    out.append(_run("gather_channels", lambda: ad.gather_channels(g, [2, 0, 3, 1]), {"x": g}, rng))
    rs = leaf(rng, (3, 1, 1))
    out.append(_run("reshape", lambda: ad.reshape(rs, (3,)), {"x": rs}, rng))
    su = leaf(rng, (2, 3, 3))
    out.append(_run("sum", lambda: ad.sum_all(su), {"x": su}, rng, project=False))
    # the SAM term is weighted up so its gradient is visible next to the L1 term
    xh = Tensor(rng.uniform(0.1, 1.0, (6, 4, 4)), requires_grad=True)
    xt = rng.uniform(0.1, 1.0, (6, 4, 4)).astype(np.float32)
    cfg = LossConfig(alpha=0.5)
    out.append(_run("loss_fast", lambda: loss_fast(xh, xt, cfg), {"xhat": xh}, rng, project=False))
    return out


def network_check(rng: np.random.Generator, seed: int = 0, coords: int = 20) -> CheckResult:
    grouping = BandGrouping([BandGroup((0, 1), frozenset({0})), BandGroup((2, 3), frozenset({0, 1}))])
    cfg = HsrnetConfig(hs_channels=4, ms_channels=2, grouping=grouping, stages=2, seed=seed)
    params = init_params(cfg)
    # perturb the zero-initialised biases so their gradients are exercised away from init
    for name, t in params.items():
        if name.endswith(".bias"):
            t.data[...] = rng.uniform(-0.1, 0.1, t.shape).astype(np.float32)
    y = rng.uniform(0.0, 1.0, (2, 8, 8)).astype(np.float32)
    leaves = dict(params.items())
    return _run("hsrnet_K2", lambda: hsrnet_graph(y, cfg, params), leaves, rng, tol=NETWORK_TOL, coords=coords)


def run_suite(seed: int = 0, verbose: bool = True) -> tuple[bool, list[CheckResult], float]:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    results = primitive_checks(rng)
    results.append(network_check(rng, seed))
    elapsed = time.perf_counter() - t0
    if verbose:
        for r in results:
            print(r.line())
        print(f"elapsed {elapsed:.1f}s")
    return all(r.passed for r in results), results, elapsed
