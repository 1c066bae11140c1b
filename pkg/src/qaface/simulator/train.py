"""Training loop with quality-aware center injection.

Randomness is derived from the run seed only:

* ``(seed, 0)``      parameter and center initialization
* ``(seed, 1, e)``   sample order of epoch ``e``
* ``(seed, 2, it)``  on-the-fly augmentation at iteration ``it``

so a run can be resumed at any iteration from its saved state alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..injection import (
    FeatureMemory,
    InjectionParams,
    MomentumEncoder,
    effective_centers,
    memory_write,
    momentum_update,
)
from ..losses import MarginParams, margin_forward_backward
from ..numerics import make_rng, random_unit_vectors, row_norms
from ..quality import QualityStats, batch_magnitude_stats, ema_update, normalize_magnitude
from .backbone import IdentityBackbone, ToyBackbone
from .data import TrainingData, degrade_batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    lr_decay: float = 0.1
    lr_decay_epochs: tuple[int, ...] = (15, 22, 27)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    backbone: str = "mlp"  # "mlp" or "identity"
    hidden_dim: int = 64
    activation: str = "tanh"
    center_init_norm: float = 1.0
    margin: MarginParams = field(default_factory=MarginParams)
    injection: InjectionParams = field(default_factory=InjectionParams)
    ema_alpha: float = 0.99
    ema_orientation: str = "batch"
    momentum_gamma: float = 0.99
    augment_probability: float = 0.0
    augment_level: float = 0.7
    augment_attenuation: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")
        d = list(self.lr_decay_epochs)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if self.backbone not in ("mlp", "identity"):
            raise ValueError("backbone must be 'mlp' or 'identity'")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ValueError("augment_probability must lie in [0, 1]")
        if not 0.0 <= self.momentum_gamma <= 1.0:
            raise ValueError("momentum_gamma must lie in [0, 1]")

    def lr_at(self, epoch: int) -> float:
        steps = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay ** steps


@dataclass
class TrainState:
    backbone: ToyBackbone | IdentityBackbone
    encoder: MomentumEncoder
    centers: np.ndarray
    velocity_params: np.ndarray
    velocity_centers: np.ndarray
    stats: QualityStats
    memory: FeatureMemory
    iteration: int = 0
    epoch: int = 0
    step_in_epoch: int = 0

    def copy(self) -> "TrainState":
        return TrainState(
            backbone=self.backbone.with_params(self.backbone.params.copy()),
            encoder=MomentumEncoder(self.encoder.parameters.copy(), self.encoder.gamma),
            centers=self.centers.copy(),
            velocity_params=self.velocity_params.copy(),
            velocity_centers=self.velocity_centers.copy(),
            stats=self.stats,
            memory=self.memory.copy(),
            iteration=self.iteration,
            epoch=self.epoch,
            step_in_epoch=self.step_in_epoch,
        )


@dataclass
class StepInfo:
    """Passed to ``on_step`` callbacks after each update."""

    metrics: dict
    state: TrainState
    effective_centers: np.ndarray
    x_hat: np.ndarray | None
    labels: np.ndarray
    written: np.ndarray | None
    indices: np.ndarray | None  # dataset rows of this batch
    raw_centers: np.ndarray | None = None  # W as the loss saw it, before the SGD update


def build_backbone(config: TrainConfig, input_dim: int, embedding_dim: int, rng):
    if config.backbone == "identity":
        if input_dim != embedding_dim:
            raise ValueError("identity backbone needs input_dim == embedding_dim")
        return IdentityBackbone(input_dim)
    return ToyBackbone.initialized(input_dim, config.hidden_dim, embedding_dim, rng,
                                   config.activation)


def init_state(config: TrainConfig, num_classes: int, input_dim: int,
               embedding_dim: int) -> TrainState:
    rng = make_rng((config.seed, 0))
    backbone = build_backbone(config, input_dim, embedding_dim, rng)
    centers = config.center_init_norm * random_unit_vectors(rng, num_classes, embedding_dim)
    return TrainState(
        backbone=backbone,
        encoder=MomentumEncoder(backbone.params.copy(), config.momentum_gamma),
        centers=centers,
        velocity_params=np.zeros_like(backbone.params),
        velocity_centers=np.zeros_like(centers),
        stats=QualityStats(alpha=config.ema_alpha, orientation=config.ema_orientation),
        memory=FeatureMemory.empty(num_classes, embedding_dim, config.injection.delta_t),
    )


def _sgd(param, velocity, grad, lr, momentum, weight_decay):
    g = grad + weight_decay * param
    velocity *= momentum
    velocity += g
    param -= lr * velocity


def _augment(config: TrainConfig, inputs: np.ndarray, iteration: int) -> np.ndarray:
    if config.augment_probability <= 0.0:
        return inputs
    rng = make_rng((config.seed, 2, iteration))
    pick = rng.random(inputs.shape[0]) < config.augment_probability
    levels = np.where(pick, config.augment_level, 0.0)
    return degrade_batch(inputs, levels, rng, config.augment_attenuation)


def train_step(state: TrainState, config: TrainConfig, inputs: np.ndarray,
               labels: np.ndarray, on_step: Callable | None = None,
               indices: np.ndarray | None = None) -> dict:
    """One iteration; mutates ``state`` and returns the step metrics."""
    it = state.iteration
    params = config.injection
    inputs = _augment(config, inputs, it)

    feats, cache = state.backbone.forward(inputs)
    mom_feats, _ = state.backbone.forward(inputs, state.encoder.parameters)

    source = mom_feats if params.magnitude_source == "momentum" else feats
    mags = row_norms(source)
    state.stats = ema_update(state.stats, *batch_magnitude_stats(mags))

    active = params.mode != "off" and state.epoch >= params.start_epoch
    x_hat = written = None
    if active:
        x_hat = normalize_magnitude(state.stats, mags)
        written = np.zeros(labels.size, dtype=bool)
        for i, y in enumerate(labels):
            written[i] = memory_write(state.memory, int(y), mom_feats[i], float(x_hat[i]), it,
                                      params)
            if written[i] and params.in_place:
                state.centers[y] += state.memory.entries[y]

    w_eff = effective_centers(state.centers, state.memory, it, params)
    raw = state.centers.copy() if on_step is not None else None
    out, g_feat, g_centers = margin_forward_backward(feats, w_eff, labels, config.margin)
    g_params, _ = state.backbone.backward(cache, g_feat)

    lr = config.lr_at(state.epoch)
    _sgd(state.backbone.params, state.velocity_params, g_params, lr, config.momentum,
         config.weight_decay)
    _sgd(state.centers, state.velocity_centers, g_centers, lr, config.momentum,
         config.weight_decay)
    state.encoder = momentum_update(state.encoder, state.backbone.params)

    rows = np.arange(labels.size)
    metrics = {
        "iteration": it,
        "epoch": state.epoch,
        "lr": lr,
        "loss": out.loss,
        "mean_p_true": float(out.probabilities[rows, labels].mean()),
        "accuracy": _accuracy(feats, w_eff, labels),
        "ignored_fraction": float(1.0 - written.mean()) if (
            active and params.mode == "quality_aware") else 0.0,
        "mu": state.stats.mu,
        "sigma": state.stats.sigma,
    }
    if on_step is not None:
        on_step(StepInfo(metrics, state, w_eff, x_hat, labels, written, indices, raw))
    state.iteration += 1
    return metrics


def _accuracy(feats, centers, labels) -> float:
    fu = feats / row_norms(feats)[:, None]
    wu = centers / row_norms(centers)[:, None]
    return float(np.mean(np.argmax(fu @ wu.T, axis=1) == labels))


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, n // batch_size)


def epoch_order(config: TrainConfig, epoch: int, n: int) -> np.ndarray:
    return make_rng((config.seed, 1, epoch)).permutation(n)


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]


def train(config: TrainConfig, data: TrainingData, state: TrainState | None = None,
          embedding_dim: int | None = None, on_step: Callable | None = None,
          stop_at_iteration: int | None = None,
          on_epoch: Callable | None = None) -> TrainResult:
    """Run (or resume) training up to ``config.epochs``.

    ``stop_at_iteration`` halts before the given global iteration, which is
    how mid-epoch checkpoints are produced.
    """
    n = len(data)
    if state is None:
        d = embedding_dim if embedding_dim is not None else data.inputs.shape[1]
        num_classes = int(data.labels.max()) + 1
        state = init_state(config, num_classes, data.inputs.shape[1], d)
    nb = batches_per_epoch(n, config.batch_size)
    bs = min(config.batch_size, n)
    history: list[dict] = []
    while state.epoch < config.epochs:
        order = epoch_order(config, state.epoch, n)
        while state.step_in_epoch < nb:
            if stop_at_iteration is not None and state.iteration >= stop_at_iteration:
                return TrainResult(state, history)
            idx = order[state.step_in_epoch * bs:(state.step_in_epoch + 1) * bs]
            history.append(train_step(state, config, data.inputs[idx], data.labels[idx],
                                      on_step, idx))
            state.step_in_epoch += 1
        if on_epoch is not None:
            on_epoch(state)
        state.epoch += 1
        state.step_in_epoch = 0
    return TrainResult(state, history)


def epoch_means(history: list[dict], key: str = "loss") -> list[float]:
    out: dict[int, list[float]] = {}
    for rec in history:
        out.setdefault(rec["epoch"], []).append(rec[key])
    return [float(np.mean(out[e])) for e in sorted(out)]
