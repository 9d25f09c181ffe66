"""Training: full-sequence BPTT for MGN-LSTM and noisy next-step training for MGN."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import InvalidConfig, NumericalBlowup
from .graph import GraphSample, NormStats, collate, detrend_apply, detrend_fit
from .model import (Y_CHANNEL, ModelConfig, ModelParams, check_compatible, encode_edges,
                    init_params, node_inputs, prepare, step)

log = logging.getLogger(__name__)

# (base, floor) learning rates; "table" is the default, "text" starts ten times lower
LR_PRESETS = {"table": (1e-3, 1e-6), "text": (1e-4, 1e-6)}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 10
    lr: float = 1e-3
    lr_floor: float = 1e-6
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    seed: int = 0
    noise_scale: float = 0.05
    clip_norm: float | None = 1.0
    val_fraction: float = 0.1
    teacher_forcing: bool = False
    train_steps: int = 11

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.lr_floor < 0:
            raise InvalidConfig("lr must be > 0 and lr_floor >= 0")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidConfig(f"unknown schedule {self.schedule!r}")
        if not 0 <= self.val_fraction < 1:
            raise InvalidConfig("val_fraction must lie in [0, 1)")
        if self.noise_scale < 0:
            raise InvalidConfig("noise_scale must be >= 0")
        if self.train_steps < 1:
            raise InvalidConfig("train_steps must be >= 1")

    @classmethod
    def preset(cls, name: str, **kw) -> "TrainConfig":
        try:
            base, floor = LR_PRESETS[name]
        except KeyError:
            raise InvalidConfig(f"unknown learning-rate preset {name!r}") from None
        return cls(lr=base, lr_floor=floor, **kw)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor] | ModelParams, grads: Mapping[str, np.ndarray],
              adam: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """In-place Adam update with decoupled weight decay applied first."""
    adam.step += 1
    t = adam.step
    c1 = 1.0 - adam.beta1 ** t
    c2 = 1.0 - adam.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        m = adam.m.get(name)
        if m is None:
            m = adam.m[name] = np.zeros_like(p.value)
            adam.v[name] = np.zeros_like(p.value)
        v = adam.v[name]
        m *= adam.beta1
        m += (1 - adam.beta1) * g
        v *= adam.beta2
        v += (1 - adam.beta2) * g * g
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, floor_lr: float) -> float:
    return floor_lr + 0.5 * (base_lr - floor_lr) * (1 + math.cos(math.pi * epoch / total_epochs))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale gradients in place so their joint norm is at most ``max_norm``; returns the norm."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# ------------------------------------------------------------------ losses

def dataset_std(samples: Sequence[GraphSample]) -> float:
    """Population std of the dynamic variable over every node and snapshot."""
    return float(np.concatenate([s.dynamic.ravel() for s in samples]).std())


def inject_noise(values: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    if noise_std == 0:
        return values.copy()
    return values + rng.normal(0.0, noise_std, size=values.shape)


def sequence_loss(params: ModelParams, samples: Sequence[GraphSample], stats: NormStats,
                  teacher_forcing: bool = False, noise_std: float = 0.0,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Sum over steps of the RMSE over every node of the batch, in normalized space.

    With ``teacher_forcing`` each step reads the stored state (plus optional
    noise in physical units); otherwise the model reads its own previous output.
    """
    batch = collate(samples)
    check_compatible(params, batch.features)
    g = prepare(batch, stats)
    n_T = batch.n_T
    inputs = batch.dynamic
    if noise_std > 0:
        inputs = inject_noise(inputs, noise_std, rng if rng is not None else np.random.default_rng())
    targets = [detrend_apply(batch.dynamic[n], stats, n, Y_CHANNEL)[:, None]
               for n in range(1, n_T + 1)]
    kr = batch.relperm_input
    E0 = encode_edges(params, g)
    y = Tensor(detrend_apply(inputs[0], stats, 0, Y_CHANNEL)[:, None])
    state = None
    loss = None
    for n in range(n_T):
        x = node_inputs(g, stats, n, y, None if kr is None else kr[n])
        pred, state, _ = step(params, g, x, E0, state)
        term = ad.rmse(pred, targets[n])
        loss = term if loss is None else ad.add(loss, term)
        if teacher_forcing:
            y = Tensor(detrend_apply(inputs[n + 1], stats, n + 1, Y_CHANNEL)[:, None])
        else:
            y = pred
    return loss


# ------------------------------------------------------------------ loops

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float | None


@dataclass(eq=False)
class TrainResult:
    params: ModelParams          # best validation checkpoint (last epoch without validation)
    final_params: ModelParams
    history: list[EpochLog]
    stats: NormStats
    noise_std: float
    best_epoch: int
    train_ids: list[str]
    val_ids: list[str]

    @property
    def losses(self) -> np.ndarray:
        return np.array([h.train_loss for h in self.history])


def split_validation(samples: Sequence[GraphSample], fraction: float):
    n_val = int(math.floor(fraction * len(samples)))
    if n_val == 0 or n_val >= len(samples):
        return list(samples), []
    return list(samples[:-n_val]), list(samples[-n_val:])


def _grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: (np.zeros_like(t.value) if t.grad is None else t.grad) for k, t in params.items()}


def _train(samples: Sequence[GraphSample], model_cfg: ModelConfig, cfg: TrainConfig,
           stats: NormStats | None, noisy: bool,
           on_epoch: Callable[[EpochLog], None] | None) -> TrainResult:
    if not samples:
        raise InvalidConfig("training needs at least one sample")
    n_T = min(cfg.train_steps, min(s.n_T for s in samples))
    samples = [s.truncated(n_T) for s in samples]
    train_set, val_set = split_validation(samples, cfg.val_fraction)
    if stats is None:
        stats = detrend_fit(train_set, n_T)
    params = init_params(model_cfg, cfg.seed)
    check_compatible(params, samples[0].features)
    noise_std = cfg.noise_scale * dataset_std(train_set) if noisy else 0.0
    if noisy:
        log.info("noise std %.6g (%.3g x dataset std)", noise_std, cfg.noise_scale)
    teacher = cfg.teacher_forcing or noisy
    adam = AdamState()
    history: list[EpochLog] = []
    best_val = math.inf
    best = params.copy()
    best_epoch = cfg.epochs - 1
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_floor) if cfg.schedule == "cosine" else cfg.lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        batch_losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            rng = np.random.default_rng([cfg.seed, epoch, b, 1])
            params.zero_grad()
            with Tape() as tape:
                loss = sequence_loss(params, batch, stats, teacher, noise_std, rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalBlowup(f"non-finite loss at epoch {epoch}, batch {b}",
                                      where=f"epoch {epoch} batch {b}")
            tape.backward(loss)
            grads = _grads(params)
            clip_by_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, adam, lr, cfg.weight_decay)
            batch_losses.append(value)
        val_loss = None
        if val_set:
            val_loss = sequence_loss(params, val_set, stats).item()
            if val_loss < best_val:
                best_val, best, best_epoch = val_loss, params.copy(), epoch
        entry = EpochLog(epoch, lr, float(np.mean(batch_losses)), val_loss)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    params.zero_grad()
    if not val_set:
        best = params.copy()
    return TrainResult(best, params, history, stats, noise_std, best_epoch,
                       [s.sample_id for s in train_set], [s.sample_id for s in val_set])


def train_mgn_lstm(samples: Sequence[GraphSample], model_cfg: ModelConfig, cfg: TrainConfig,
                   stats: NormStats | None = None,
                   on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    if model_cfg.variant != "mgn_lstm":
        model_cfg = replace(model_cfg, variant="mgn_lstm")
    return _train(samples, model_cfg, cfg, stats, False, on_epoch)


def train_mgn_noise(samples: Sequence[GraphSample], model_cfg: ModelConfig, cfg: TrainConfig,
                    stats: NormStats | None = None,
                    on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Next-step training on (state + noise, next state) pairs; no recurrent state."""
    if model_cfg.variant != "mgn":
        model_cfg = replace(model_cfg, variant="mgn")
    return _train(samples, model_cfg, cfg, stats, True, on_epoch)


def train(samples, model_cfg: ModelConfig, cfg: TrainConfig, stats: NormStats | None = None,
          on_epoch=None) -> TrainResult:
    fn = train_mgn_lstm if model_cfg.variant == "mgn_lstm" else train_mgn_noise
    return fn(samples, model_cfg, cfg, stats, on_epoch)
