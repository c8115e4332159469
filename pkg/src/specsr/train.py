"""Adam and the seeded mini-batch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError
from .data import training_samples
from .losses import LossConfig, batch_loss, loss_fast
from .metrics import MetricsReport, metrics
from .network import HsrnetConfig, ParamStore, hsrnet_graph, init_params

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss. ``params`` holds the last finite state."""

    def __init__(self, msg, params=None, history=None):
        super().__init__(msg)
        self.params = params
        self.history = history


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 8
    max_steps: int = 1000
    patch_size: int = 32
    seed: int = 0
    eval_every: int = 100
    augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("max_steps must be >= 0 and eval_every >= 1")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict | None, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place. ``grads=None`` reads each ``.grad``."""
    if grads is None:
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise GraphError(f"parameter {name!r} has no gradient")
            grads[name] = p.grad
    missing = [n for n in params.names() if n not in grads]
    if missing:
        raise GraphError(f"missing gradients for {missing[:3]}{'...' if len(missing) > 3 else ''}")

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)
        p.data[...] = (p.data - step).astype(np.float32)
    return params, state


@dataclass
class HistoryRow:
    step: int
    train_loss: float
    eval_loss: float | None = None
    eval: MetricsReport | None = None


@dataclass
class TrainResult:
    params: ParamStore
    history: list[HistoryRow]
    best_step: int
    final_params: ParamStore


def evaluate(cfg: HsrnetConfig, params: ParamStore, pairs, loss_cfg: LossConfig):
    """Mean validation loss and band/pixel-averaged metrics over full scenes."""
    losses, reports = [], []
    for msi, hsi in pairs:
        out = hsrnet_graph(msi, cfg, params)
        target = hsi.data if hasattr(hsi, "data") else np.asarray(hsi, dtype=np.float32)
        losses.append(loss_fast(ad.Tensor(out.data), target, loss_cfg).item())
        reports.append(metrics(out.data, target))
    mean = lambda attr: float(np.mean([getattr(r, attr) for r in reports]))
    rep = MetricsReport(mean("cc"), mean("psnr_db"), mean("ssim"), mean("sam_degrees"))
    return float(np.mean(losses)), rep


def train(
    pairs,
    net_cfg: HsrnetConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    eval_pairs=None,
    params: ParamStore | None = None,
) -> TrainResult:
    """Mini-batch Adam on ``loss_fast`` over augmented patches.

    Batches follow a fixed per-epoch permutation drawn from ``train_cfg.seed``.
    The returned ``params`` are the checkpoint with the lowest validation loss
    (or the final state when no ``eval_pairs`` are given).
    """
    params = init_params(net_cfg) if params is None else params
    samples = training_samples(pairs, train_cfg.patch_size, train_cfg.augment)
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(train_cfg.seed)
    queue: list[int] = []

    def next_batch():
        batch = []
        while len(batch) < train_cfg.batch_size:
            if not queue:
                queue.extend(rng.permutation(len(samples)).tolist())
            batch.append(samples[queue.pop(0)])
        return batch

    def batch_forward(batch):
        outs = [hsrnet_graph(y, net_cfg, params) for y, _ in batch]
        return batch_loss(outs, [x for _, x in batch], loss_cfg)

    history: list[HistoryRow] = []
    best = {"loss": math.inf, "params": params.copy(), "step": 0}

    def record(step, train_loss):
        row = HistoryRow(step, train_loss)
        if eval_pairs:
            row.eval_loss, row.eval = evaluate(net_cfg, params, eval_pairs, loss_cfg)
            if row.eval_loss < best["loss"]:
                best.update(loss=row.eval_loss, params=params.copy(), step=step)
            log.info("step %d train %.5f eval %.5f psnr %.2f sam %.2f", step, train_loss, row.eval_loss,
                     row.eval.psnr_db, row.eval.sam_degrees)
        else:
            log.info("step %d train %.5f", step, train_loss)
        history.append(row)

    batch = next_batch()
    record(0, batch_forward(batch).item())
    state = AdamState()
    last_good = params.copy()
    for step in range(1, train_cfg.max_steps + 1):
        params.zero_grad()
        # overflow is detected below; keep numpy from also warning about it
        with np.errstate(over="ignore", invalid="ignore"):
            loss = batch_forward(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {step}", last_good, history)
            ad.backward(loss, params.tensors())
            adam_step(params, None, state, train_cfg)
        if not all(np.all(np.isfinite(t.data)) for t in params.tensors()):
            raise DivergenceError(f"non-finite parameters after step {step}", last_good, history)
        last_good = params.copy()
        if step % train_cfg.eval_every == 0 or step == train_cfg.max_steps:
            record(step, value)
        batch = next_batch()

    final = params.copy()
    if eval_pairs:
        return TrainResult(best["params"], history, best["step"], final)
    return TrainResult(final, history, train_cfg.max_steps, final)
