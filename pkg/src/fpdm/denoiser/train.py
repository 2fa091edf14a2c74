"""Simplified-objective training with label dropout, Adam, and an EMA shadow."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..schedule import DiffusionSchedule
from ..score import Condition
from .model import ArchitectureMismatch, TinyDenoiser

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    null_ratio: float = 0.1
    ema_rate: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.null_ratio <= 1.0:
            raise ValueError(f"null_ratio must lie in [0, 1], got {self.null_ratio}")
        if not 0.0 <= self.ema_rate <= 1.0:
            raise ValueError(f"ema_rate must lie in [0, 1], got {self.ema_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, size: int, cfg: TrainConfig, dtype=np.float32):
        self.cfg = cfg
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.step = 0

    def update(self, params: np.ndarray, grad: np.ndarray) -> None:
        c = self.cfg
        self.step += 1
        self.m *= c.beta1
        self.m += (1.0 - c.beta1) * grad
        self.v *= c.beta2
        self.v += (1.0 - c.beta2) * grad * grad
        m_hat = self.m / (1.0 - c.beta1 ** self.step)
        v_hat = self.v / (1.0 - c.beta2 ** self.step)
        params -= (c.lr * m_hat / (np.sqrt(v_hat) + c.eps)).astype(params.dtype)


def drop_labels(labels: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each label by Null with probability ``ratio``."""
    labels = np.asarray(labels, dtype=np.int64).copy()
    if ratio >= 1.0:
        labels[:] = int(Condition.NULL)
    elif ratio > 0.0:
        labels[rng.random(labels.shape[0]) < ratio] = int(Condition.NULL)
    return labels


def training_step(model: TinyDenoiser, opt: Adam, x0: np.ndarray, labels, schedule: DiffusionSchedule,
                  cfg: TrainConfig, rng: np.random.Generator) -> float:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3 or x0.shape[0] == 0:
        raise ValueError("batch must be a nonempty (N, H, W) array")
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels == int(Condition.NULL)):
        raise ValueError("training labels must be Healthy or Unhealthy")
    n = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    labels = drop_labels(labels, cfg.null_ratio, rng)
    ab = schedule.alpha_bar[t][:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    loss, grad = model.loss_and_grad(x_t, t, labels, eps)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergence(f"non-finite loss at optimizer step {opt.step + 1}")
    opt.update(model.params, grad)
    return loss


def ema_update(shadow: TinyDenoiser, model: TinyDenoiser, rate: float) -> TinyDenoiser:
    if shadow.arch != model.arch:
        raise ArchitectureMismatch("EMA shadow and model architectures differ")
    if rate == 1.0:
        return shadow
    shadow.params *= rate
    shadow.params += (1.0 - rate) * model.params
    return shadow


def ema_warmup_rate(rate: float, step: int) -> float:
    """``min(rate, (1 + step) / (10 + step))`` so early shadows do not stay anchored to the init."""
    return min(rate, (1.0 + step) / (10.0 + step))


def train(model: TinyDenoiser, images: np.ndarray, labels, schedule: DiffusionSchedule, cfg: TrainConfig,
          ema: TinyDenoiser | None = None, callback=None, max_steps: int | None = None) -> list[float]:
    """Epoch loop over shuffled minibatches; returns the per-step losses.

    ``callback(step, loss)`` runs after every update; a truthy return value
    stops training early, as does reaching ``max_steps`` updates. The loop draws all of
    its randomness from ``cfg.seed``, so a fixed config reproduces bit-exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params.size, cfg, model.dtype)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = training_step(model, opt, images[idx], labels[idx], schedule, cfg, rng)
            if ema is not None:
                ema_update(ema, model, ema_warmup_rate(cfg.ema_rate, opt.step))
            losses.append(loss)
            if (callback is not None and callback(opt.step, loss)) or opt.step == max_steps:
                return losses
        log.info("epoch %d mean loss %.5f", epoch, float(np.mean(losses[-max(1, len(order) // cfg.batch_size):])))
    return losses
