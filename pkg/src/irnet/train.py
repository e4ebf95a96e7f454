"""Optimization loop: L1 objective, bias-corrected Adam, cosine-annealing
learning-rate schedule with warm restarts, epoch management, validation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape
from .data import augment, batcher
from .errors import ConfigError, ManifestError, NumericsError, ShapeError
from .model import IRNetModel


@dataclass
class TrainConfig:
    lr_max: float = 5e-4
    lr_min: float = 1e-11
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 200
    restart_period_epochs: int = 60
    seed: int = 0
    eval_every: int = 1
    val_fraction: float = 0.02
    # the published schedule is stated per epoch; per-iteration evaluation at
    # fractional epoch progress is the default, per-epoch stepping via flag
    lr_per_iteration: bool = True
    augment: bool = True

    def validate(self):
        if not self.lr_min < self.lr_max:
            raise ConfigError(f"lr_min ({self.lr_min}) must be < lr_max ({self.lr_max})")
        if self.restart_period_epochs < 1:
            raise ConfigError("restart_period_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        return self


class AdamState:
    """Per-parameter first/second moment accumulators and the step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def l1_loss(pred, target) -> float:
    """Mean absolute difference over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes differ {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target), dtype=np.float64))


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place.

    ``grads`` may be None to consume each parameter's accumulated ``.grad``.
    """
    if lr <= 0:
        raise ConfigError(f"adam_step: lr must be > 0, got {lr}")
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    else:
        grads = list(grads)
        if len(grads) != len(params):
            raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float32)
        if g.shape != p.value.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} does not match "
                             f"parameter {p.name} {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {p.name}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
        v = state.v.get(p.name)
        if v is None:
            v = state.v[p.name] = np.zeros_like(p.value)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def lr_at(epoch_progress: float, cfg: TrainConfig) -> float:
    """Cosine annealing with warm restarts: lr_max at every restart boundary,
    sweeping down to lr_min within each restart period."""
    period = cfg.restart_period_epochs
    phase = (epoch_progress % period) / period
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * phase)) / 2.0


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    val_psnr: float | None = None


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)
    best_params: dict[str, np.ndarray] = field(default_factory=dict)
    best_epoch: int = -1


def _snapshot(model: IRNetModel) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.parameters()}


def _validation_psnr(model: IRNetModel, val_patches) -> float:
    from .metrics import psnr  # local import keeps module deps one-way
    scores = []
    for p in val_patches:
        pred = np.clip(model.predict(p.sdr), 0.0, 1.0)
        scores.append(psnr(pred, p.hdr))
    finite = [s for s in scores if math.isfinite(s)]
    return float(np.mean(finite)) if finite else math.inf


def fit(model: IRNetModel, patches, cfg: TrainConfig, callbacks=None) -> TrainResult:
    """Train in place: forward -> L1 -> backward -> Adam per batch, one seeded
    shuffle per epoch, per-epoch stats recorded, best/last snapshots kept.

    ``patches`` is a list of PatchPair whose shapes must match the model mode.
    """
    cfg.validate()
    if not patches:
        raise ManifestError("fit: empty patch set")
    expect_scale = 4 if model.config.mode == "sritm" else 1
    for p in patches:
        if p.hdr.shape[2] != p.sdr.shape[2] * expect_scale:
            raise ConfigError(
                f"patch geometry {p.sdr.shape[2]}->{p.hdr.shape[2]} does not "
                f"match model mode {model.config.mode!r} (expect x{expect_scale})")

    rng = np.random.default_rng(cfg.seed)
    patches = list(patches)
    n_val = min(int(round(len(patches) * cfg.val_fraction)), len(patches) - 1)
    if n_val > 0:
        order = rng.permutation(len(patches))
        val_patches = [patches[i] for i in order[:n_val]]
        train_patches = [patches[i] for i in order[n_val:]]
    else:
        val_patches, train_patches = [], patches

    transform = (lambda p: augment(p, rng)) if cfg.augment else None
    state = AdamState()
    result = TrainResult(best_params=_snapshot(model))
    n_batches = math.ceil(len(train_patches) / cfg.batch_size)
    best_metric = None

    for epoch in range(cfg.epochs):
        epoch_lr = lr_at(float(epoch), cfg)
        losses = []
        for b, (sdr, hdr) in enumerate(batcher(train_patches, cfg.batch_size,
                                               rng, transform=transform)):
            lr = lr_at(epoch + b / n_batches, cfg) if cfg.lr_per_iteration else epoch_lr
            tape = Tape()
            pred = model.forward(sdr, tape=tape)
            loss = ag.l1_loss(tape, pred, hdr)
            if not math.isfinite(loss.value):
                raise NumericsError(f"non-finite loss {loss.value} at epoch "
                                    f"{epoch}, batch {b}, lr {lr:.3e}")
            model.zero_grad()
            tape.backward(1.0)
            adam_step(model.parameters(), None, state, lr,
                      cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(loss.value)

        stats = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), lr=epoch_lr)
        if val_patches and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            stats.val_psnr = _validation_psnr(model, val_patches)
        result.history.append(stats)

        metric = stats.val_psnr if val_patches else -stats.mean_loss
        if metric is not None and (best_metric is None or metric > best_metric):
            best_metric = metric
            result.best_params = _snapshot(model)
            result.best_epoch = epoch

        if callbacks:
            for cb in callbacks:
                cb(stats)
    return result


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr", "val_psnr"])
        for s in history:
            writer.writerow([s.epoch, f"{s.mean_loss:.6g}", f"{s.lr:.6g}",
                             "" if s.val_psnr is None else f"{s.val_psnr:.6g}"])
