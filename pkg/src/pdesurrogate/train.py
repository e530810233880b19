"""MSE training loop: NAdam steps, minibatching, plateau learning-rate drops.

The optimizer is the plain Nesterov-Adam variant

    m <- b1 m + (1 - b1) g           v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (b1 m/(1 - b1^t) + (1 - b1) g/(1 - b1^t))
                        / (sqrt(v/(1 - b2^t)) + eps)

without a cumulative momentum schedule.  Errors are reported with the
scale-free split metric  sqrt(sum (pred - target)^2 / sum target^2).

Everything is keyed by the config seed: weight init, per-epoch shuffles,
and gradient reductions are fixed-order, so a (seed, config, dataset)
triple reproduces its TrainHistory bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroTargetNorm
from .nn import (
    Dense,
    NetworkSpec,
    Params,
    PeriodicConv,
    backward_batch,
    forward_batch,
    param_count,
    predict,
)
from .sampler import Dataset, WhitenStats, compute_whiten_stats, whiten_matrix


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 100
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_drop_factor: float = 0.5
    plateau_patience: int = 20

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1, beta2 must lie in (0, 1)")
        if not 50 <= self.batch_size <= 200:
            raise ValueError(f"batch size {self.batch_size} outside the working band [50, 200]")
        if self.learning_rate <= 0.0 or self.epochs <= 0:
            raise ValueError("learning_rate and epochs must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_relerr: list[float] = field(default_factory=list)
    val_relerr: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def as_rows(self):
        for e in range(len(self.train_loss)):
            yield (e, self.train_loss[e], self.train_relerr[e],
                   self.val_relerr[e], self.learning_rate[e])


def init_params(spec: NetworkSpec, seed: int) -> Params:
    """Weights ~ Normal(0, 2/fan_in) per layer, biases zero."""
    params = Params(spec)
    gen = np.random.Generator(np.random.Philox(key=seed))
    for i, layer in enumerate(spec.layers):
        views = params.layer_views(i)
        if not views:
            continue
        if isinstance(layer, PeriodicConv):
            fan_in = layer.in_ch * int(np.prod(layer.kernel))
        elif isinstance(layer, Dense):
            fan_in = layer.in_features
        else:
            continue
        w = views["W"]
        w[...] = gen.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)
        views["b"][...] = 0.0
    return params


@dataclass
class NadamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "NadamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def nadam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: NadamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place NAdam update; ``t`` counts from 1."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads**2
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    m_hat = state.m / bc1
    v_hat = state.v / bc2
    update = (beta1 * m_hat + (1.0 - beta1) * grads / bc1) / (np.sqrt(v_hat) + eps)
    params -= lr * update


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return float(np.mean((preds - targets) ** 2))


def relative_error(preds: np.ndarray, targets: np.ndarray) -> float:
    """sqrt(sum (pred - target)^2 / sum target^2) over a full split."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    denom = float(np.sum(targets**2))
    if denom == 0.0:
        raise ZeroTargetNorm("relative error undefined: all targets are zero")
    return float(np.sqrt(np.sum((preds - targets) ** 2) / denom))


def train(
    train_ds: Dataset,
    val_ds: Dataset,
    spec: NetworkSpec,
    config: TrainConfig,
) -> tuple[Params, TrainHistory, WhitenStats]:
    """Train on whitened inputs; returns the best-validation parameters.

    Whitening statistics come from the training split only and are applied
    unchanged to the validation inputs.
    """
    if train_ds.spec.grid != val_ds.spec.grid:
        raise ValueError("train and validation datasets live on different grids")
    stats = compute_whiten_stats(train_ds.inputs)
    x_train = whiten_matrix(train_ds.inputs, stats)
    x_val = whiten_matrix(val_ds.inputs, stats)
    y_train = train_ds.targets
    y_val = val_ds.targets

    n_samples = x_train.shape[0]
    shape = (train_ds.spec.grid.n,) * train_ds.spec.grid.d
    params = init_params(spec, config.seed)
    state = NadamState.zeros(param_count(spec))
    history = TrainHistory()
    lr = config.learning_rate
    batch = min(config.batch_size, n_samples)

    best_val = np.inf
    best_params = params.flat.copy()
    best_train_relerr = np.inf
    stall = 0
    t = 0

    for epoch in range(config.epochs):
        order = np.random.Generator(
            np.random.Philox(key=[config.seed, epoch])
        ).permutation(n_samples)
        epoch_losses = []
        for start in range(0, n_samples, batch):
            idx = order[start : start + batch]
            xb = x_train[idx].reshape((len(idx), 1, *shape))
            yb = y_train[idx]
            preds, caches = forward_batch(spec, params, xb, keep_cache=True)
            resid = preds - yb
            epoch_losses.append(float(np.mean(resid**2)))
            params.zero_grad()
            backward_batch(spec, params, caches, 2.0 * resid / len(idx))
            t += 1
            nadam_step(params.flat, params.grad, state, t, lr,
                       config.beta1, config.beta2, config.eps)
        train_relerr = relative_error(predict(spec, params, x_train), y_train)
        val_relerr = relative_error(predict(spec, params, x_val), y_val)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.train_relerr.append(train_relerr)
        history.val_relerr.append(val_relerr)
        history.learning_rate.append(lr)

        if val_relerr < best_val:
            best_val = val_relerr
            best_params = params.flat.copy()
            history.best_epoch = epoch
        if train_relerr < best_train_relerr:
            best_train_relerr = train_relerr
            stall = 0
        else:
            stall += 1
            if stall >= config.plateau_patience:
                lr *= config.lr_drop_factor
                stall = 0
    return Params(spec, best_params), history, stats
