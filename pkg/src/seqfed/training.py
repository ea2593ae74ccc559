"""Optimizers and the local training loops that grow a client's model pool.

Every source of randomness derives from the run seed through explicit
seed sequences, so a run is reproducible bit for bit: the mini-batch order
of (shot, client, pool-model j, epoch) comes from its own stream, as does
the warm-up shuffling. Optimizer steps are pure functions; the loops own
private copies of everything they update.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from .diversity import (
    ModelPool,
    RegularizerConfig,
    gradient_with_terms,
    pool_mean,
    regularizer_terms,
    total_loss,
)
from .errors import DimensionMismatchError, EmptyDataError
from .models import ModelSpec, backward, cross_entropy, evaluate_accuracy, forward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Stream tags keep the derived seed sequences of different consumers apart.
_TAG_WARMUP = 11
_TAG_BATCH = 12


@dataclass(frozen=True)
class HyperParams:
    """All knobs of a training run."""

    num_clients: int = 5
    pool_models: int = 5
    local_epochs: int = 200
    warmup_epochs: int = 30
    learning_rate: float = 5e-5
    weight_decay: float = 1e-4
    optimizer: str = "adam"
    batch_size: int = 64
    shots: int = 1
    seed: int = 0
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    select_best_val: bool = True

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.pool_models < 1:
            raise ValueError("pool_models must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def alpha(self) -> float:
        return self.regularizer.alpha

    @property
    def beta(self) -> float:
        return self.regularizer.beta


@dataclass
class OptimizerState:
    """Adam moment accumulators; empty for plain SGD."""

    kind: str
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step: int = 0


def fresh_state(kind: str, param_count: int) -> OptimizerState:
    if kind == "adam":
        return OptimizerState("adam", np.zeros(param_count), np.zeros(param_count), 0)
    return OptimizerState("sgd")


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if params.shape != grad.shape:
        raise DimensionMismatchError("gradient length", params.shape, grad.shape)
    out = params.copy()
    backend.sgd_update(out, grad, lr)
    return out


def adam_step(state: OptimizerState, params: np.ndarray, grad: np.ndarray,
              lr: float, weight_decay: float):
    """One bias-corrected Adam update; weight decay folds into the gradient."""
    if params.shape != grad.shape:
        raise DimensionMismatchError("gradient length", params.shape, grad.shape)
    if state.m.shape != params.shape:
        raise DimensionMismatchError("moment length", params.shape, state.m.shape)
    out = params.copy()
    m = state.m.copy()
    v = state.v.copy()
    step = state.step + 1
    backend.adam_update(out, grad, m, v, step, lr, ADAM_BETA1, ADAM_BETA2,
                        ADAM_EPS, weight_decay)
    return OptimizerState("adam", m, v, step), out


def _apply_update(state, params, grad, hp):
    if hp.optimizer == "adam":
        return adam_step(state, params, grad, hp.learning_rate, hp.weight_decay)
    return state, sgd_step(params, grad, hp.learning_rate)


def derive_rng(seed, *tags) -> np.random.Generator:
    entropy = list(seed) if isinstance(seed, tuple) else [int(seed)]
    entropy.extend(int(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _batch_slices(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


@dataclass
class EpochRecord:
    """Per-epoch training diagnostics, batch-mean losses and distances."""

    shot: int
    client: int
    model_index: int
    epoch: int
    loss: float
    d1_raw: float
    d1_norm: float
    d2_raw: float
    d2_norm: float
    total_loss: float
    val_accuracy: float


def warm_up(spec: ModelSpec, params: np.ndarray, dataset, e_w: int, hp: HyperParams,
            stream_seed=None) -> np.ndarray:
    """Plain task-loss training for ``e_w`` epochs on the dataset's train split."""
    if e_w < 0:
        raise ValueError("warm-up epochs must be >= 0")
    params = params.copy()
    if e_w == 0:
        return params
    x, y = dataset.train_x, dataset.train_y
    if x.shape[0] < 1:
        raise EmptyDataError("warm-up needs a nonempty training split")
    seed = hp.seed if stream_seed is None else stream_seed
    state = fresh_state(hp.optimizer, spec.param_count)
    for epoch in range(e_w):
        rng = derive_rng(seed, _TAG_WARMUP, epoch)
        for idx in _batch_slices(x.shape[0], hp.batch_size, rng):
            _, grad = backward(spec, params, x[idx], y[idx])
            state, params = _apply_update(state, params, grad, hp)
    return params


def train_pool_model(spec: ModelSpec, init: np.ndarray, pool: ModelPool, dataset,
                     hp: HyperParams, shot: int = 0, client: int = 0,
                     model_index: int = 1, stream_seed=None, sink=None) -> np.ndarray:
    """Train one pool model from ``init`` under the combined objective.

    Runs ``local_epochs`` epochs of mini-batch training, evaluating
    validation accuracy at every epoch end, and returns the snapshot with
    the highest validation accuracy (earliest epoch on ties). The initial
    parameters are not a snapshot candidate. With ``select_best_val``
    off, the final epoch's parameters are returned instead.
    """
    x, y = dataset.train_x, dataset.train_y
    vx, vy = dataset.val_x, dataset.val_y
    if x.shape[0] < 1:
        raise EmptyDataError("training split is empty")
    if vx.shape[0] < 1:
        raise EmptyDataError("validation split is empty")
    seed = hp.seed if stream_seed is None else stream_seed
    cfg = hp.regularizer
    params = init.copy()
    state = fresh_state(hp.optimizer, spec.param_count)
    best_acc = -1.0
    best_params = None
    for epoch in range(hp.local_epochs):
        frozen = None
        if cfg.active and cfg.normalize and not cfg.normalize_every_step:
            frozen = _epoch_scales(spec, params, pool, cfg, x, y)
        rng = derive_rng(seed, _TAG_BATCH, shot, client, model_index, epoch)
        sums = np.zeros(6)
        batches = _batch_slices(x.shape[0], hp.batch_size, rng)
        for idx in batches:
            ell, grad = backward(spec, params, x[idx], y[idx])
            if cfg.active:
                terms = regularizer_terms(params, pool, cfg, ell, frozen)
                grad = gradient_with_terms(grad, params, pool, cfg, terms)
                step_loss = total_loss(ell, terms.d1_norm, terms.d2_norm, cfg)
            else:
                terms = None
                step_loss = ell
            state, params = _apply_update(state, params, grad, hp)
            sums += (ell,
                     terms.d1_raw if terms else 0.0,
                     terms.d1_norm if terms else 0.0,
                     terms.d2_raw if terms else 0.0,
                     terms.d2_norm if terms else 0.0,
                     step_loss)
        val_acc = evaluate_accuracy(spec, params, vx, vy)
        if sink is not None:
            means = sums / len(batches)
            sink.append(EpochRecord(shot, client, model_index, epoch,
                                    means[0], means[1], means[2], means[3],
                                    means[4], means[5], val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = params.copy()
    return params if not hp.select_best_val else best_params


def _epoch_scales(spec, params, pool, cfg, x, y):
    """Scale factors held fixed for a whole epoch: derived once from the
    full-split loss and the distances at the epoch's starting parameters."""
    ell = cross_entropy(forward(spec, params, x), y)
    t = regularizer_terms(params, pool, cfg, ell)
    return t.s1, t.s2


def train_client(spec: ModelSpec, seed_model: np.ndarray, dataset, hp: HyperParams,
                 shot: int = 0, client: int = 0, stream_seed=None, sink=None):
    """Grow a pool from the received model and return it with its mean.

    The pool starts as {seed model}; each of the ``pool_models`` new models
    initializes from the current pool mean, trains under the combined
    objective, and joins the pool. Returns ``(pool, pool mean)``.
    """
    pool = ModelPool(seed_model)
    for j in range(1, hp.pool_models + 1):
        init = pool_mean(pool)
        trained = train_pool_model(spec, init, pool, dataset, hp, shot=shot,
                                   client=client, model_index=j,
                                   stream_seed=stream_seed, sink=sink)
        pool.append(trained)
    return pool, pool_mean(pool)
