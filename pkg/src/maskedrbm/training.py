"""Minibatch training on partially observed data.

The positive phase pins observed visible units and Gibbs-samples the missing
ones; the negative phase estimates model moments either from a fresh randomly
initialized chain per minibatch (CD) or from persistent chains (PCD). Hidden
units in the returned statistics are always replaced by their activation
probabilities rather than samples.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .model import ParamStats, RbmModel, initialize_model

StoppingMetric = Callable[[RbmModel, int], float]


class DivergenceError(FloatingPointError):
    """Raised when a parameter update produces NaN or Inf (learning rate too hot)."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    minibatch_size: int = 10
    k_gibbs: int = 1
    n_hidden: int = 100
    negative_phase: str = "cd"  # "cd" or "pcd"
    n_persistent_chains: Optional[int] = None  # defaults to minibatch_size
    max_epochs: int = 1000
    patience_epochs: int = 500
    eval_every: int = 10
    seed: int = 0
    momentum: float = 0.0
    weight_decay: float = 0.0
    weight_scale: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.k_gibbs < 1:
            raise ValueError("k_gibbs must be >= 1")
        if self.negative_phase not in ("cd", "pcd"):
            raise ValueError("negative_phase must be 'cd' or 'pcd'")


@dataclass
class GibbsChain:
    """Joint visible/hidden state; a leading axis holds parallel chains."""

    v: np.ndarray
    h: np.ndarray


def pinned_hidden_bias(model: RbmModel, values, observed) -> np.ndarray:
    """Effective hidden bias b_j + sum_{i observed} w_ij v_i."""
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if values.shape[-1] != model.n_visible:
        raise ValueError("visible configuration shape inconsistent with model")
    pinned = np.where(observed, values, 0.0)
    return model.hidden_bias + pinned @ model.weights


def _random_visible(model: RbmModel, shape, rng) -> np.ndarray:
    """Random init: uniform {0,1} for binary units, N(0, sigma_v_sq) for Gaussian."""
    out = np.empty(shape, dtype=np.float64)
    if model.binary_mask.any():
        u = rng.random(shape)
        np.copyto(out, (u < 0.5).astype(np.float64))
    if not model.binary_mask.all():
        z = rng.standard_normal(shape)
        out = np.where(model.binary_mask, out, z * np.sqrt(model.sigma_sq))
    return out


def _sample_visible_given_hidden(model: RbmModel, h, rng) -> np.ndarray:
    c = h @ model.weights.T + model.visible_bias
    out = np.empty(c.shape, dtype=np.float64)
    if model.binary_mask.any():
        u = rng.random(c.shape)
        np.copyto(out, (u < expit(c)).astype(np.float64))
    if not model.binary_mask.all():
        z = rng.standard_normal(c.shape)
        gaussian = c * model.sigma_sq + z * np.sqrt(model.sigma_sq)
        out = np.where(model.binary_mask, out, gaussian)
    return out


def _sample_hidden_given_visible(model: RbmModel, v, rng) -> np.ndarray:
    q = expit(v @ model.weights + model.hidden_bias)
    return (rng.random(q.shape) < q).astype(np.float64)


def _stats_from(model: RbmModel, v: np.ndarray) -> ParamStats:
    """Batch-averaged (v_i q_j, v_i, q_j) with hidden units Rao-Blackwellized."""
    q = expit(v @ model.weights + model.hidden_bias)
    n = v.shape[0]
    return ParamStats(v.T @ q / n, v.mean(axis=0), q.mean(axis=0))


def positive_term(model: RbmModel, values, observed, k_gibbs: int,
                  rng: np.random.Generator) -> ParamStats:
    """Data statistics with observed units pinned, averaged over the batch.

    Missing visible units are initialized randomly and resampled for
    ``k_gibbs`` alternating Gibbs steps while observed units stay fixed at
    their data values throughout. Fully observed batches reduce to the exact
    closed form v_i q_j and consume no randomness.
    """
    if k_gibbs < 1:
        raise ValueError("k_gibbs must be >= 1")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    observed = np.atleast_2d(np.asarray(observed, dtype=bool))
    if values.shape != observed.shape or values.shape[1] != model.n_visible:
        raise ValueError("sample/mask shape inconsistent with model")
    pinned = np.where(observed, values, 0.0)
    if observed.all():
        return _stats_from(model, pinned)
    v = np.where(observed, pinned, _random_visible(model, values.shape, rng))
    for _ in range(k_gibbs):
        h = _sample_hidden_given_visible(model, v, rng)
        v = np.where(observed, pinned, _sample_visible_given_hidden(model, h, rng))
    return _stats_from(model, v)


def negative_term_cd(model: RbmModel, k_gibbs: int, rng: np.random.Generator,
                     init=None, n_chains: int = 1) -> ParamStats:
    """Model statistics from ``n_chains`` fresh chains run for ``k_gibbs`` steps."""
    if k_gibbs < 1:
        raise ValueError("k_gibbs must be >= 1")
    if init is None:
        v = _random_visible(model, (n_chains, model.n_visible), rng)
    else:
        v = np.atleast_2d(np.asarray(init, dtype=np.float64)).copy()
        if v.shape[1] != model.n_visible:
            raise ValueError("init shape inconsistent with model")
    for _ in range(k_gibbs):
        h = _sample_hidden_given_visible(model, v, rng)
        v = _sample_visible_given_hidden(model, h, rng)
    return _stats_from(model, v)


def init_chains(model: RbmModel, n_chains: int, rng: np.random.Generator) -> GibbsChain:
    v = _random_visible(model, (n_chains, model.n_visible), rng)
    return GibbsChain(v=v, h=np.zeros((n_chains, model.n_hidden)))


def negative_term_pcd(chains: GibbsChain, model: RbmModel, k_gibbs: int,
                      rng: np.random.Generator) -> tuple[ParamStats, GibbsChain]:
    """Advance persistent chains ``k_gibbs`` steps; returns chain-averaged stats."""
    if k_gibbs < 1:
        raise ValueError("k_gibbs must be >= 1")
    v = chains.v
    for _ in range(k_gibbs):
        h = _sample_hidden_given_visible(model, v, rng)
        v = _sample_visible_given_hidden(model, h, rng)
    return _stats_from(model, v), GibbsChain(v=v, h=h)


@dataclass
class TrainLogRecord:
    epoch: int
    metric: float
    param_norm: float
    wall_time: float


@dataclass
class TrainResult:
    model: RbmModel
    log: list[TrainLogRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("nan")
    n_epochs_run: int = 0


def _param_norm(model: RbmModel) -> float:
    return float(np.sqrt(np.sum(model.weights ** 2)
                         + np.sum(model.visible_bias ** 2)
                         + np.sum(model.hidden_bias ** 2)))


def train(dataset, config: TrainConfig, stopper: Optional[StoppingMetric] = None,
          log_path=None) -> TrainResult:
    """Gradient ascent of the marginalized likelihood over masked data.

    ``dataset`` provides ``values``, ``observed``, ``layout`` and
    ``unit_specs``; only entries flagged observed are read. ``stopper`` maps
    (model, epoch) to a scalar to maximize; every ``eval_every`` epochs it is
    evaluated and the best-scoring parameter snapshot is the one returned.
    Training halts once the metric has not improved for ``patience_epochs``
    epochs, or at ``max_epochs``.
    """
    n = dataset.values.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    model = initialize_model(dataset.layout, dataset.unit_specs,
                             config.n_hidden, rng, config.weight_scale)
    values = np.asarray(dataset.values, dtype=np.float64)
    observed = np.asarray(dataset.observed, dtype=bool)

    chains = None
    if config.negative_phase == "pcd":
        n_chains = config.n_persistent_chains or config.minibatch_size
        chains = init_chains(model, n_chains, rng)

    use_momentum = config.momentum != 0.0
    if use_momentum:
        vel_w = np.zeros_like(model.weights)
        vel_a = np.zeros_like(model.visible_bias)
        vel_b = np.zeros_like(model.hidden_bias)

    result = TrainResult(model=model)
    best_snapshot = None
    best_metric = -np.inf
    best_epoch = 0
    start = time.perf_counter()
    log_file = csv_writer = None
    if log_path is not None:
        log_file = open(log_path, "a", newline="")
        csv_writer = csv.writer(log_file)
        if log_file.tell() == 0:
            csv_writer.writerow(["epoch", "metric", "param_norm", "wall_time"])

    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(n)
            for lo in range(0, n, config.minibatch_size):
                batch = order[lo:lo + config.minibatch_size]
                pos = positive_term(model, values[batch], observed[batch],
                                    config.k_gibbs, rng)
                if chains is None:
                    neg = negative_term_cd(model, config.k_gibbs, rng)
                else:
                    neg, chains = negative_term_pcd(chains, model,
                                                    config.k_gibbs, rng)
                lr = config.learning_rate
                dw = lr * (pos.weights - neg.weights
                           - config.weight_decay * model.weights)
                da = lr * (pos.visible_bias - neg.visible_bias)
                db = lr * (pos.hidden_bias - neg.hidden_bias)
                if use_momentum:
                    vel_w = config.momentum * vel_w + dw
                    vel_a = config.momentum * vel_a + da
                    vel_b = config.momentum * vel_b + db
                    dw, da, db = vel_w, vel_a, vel_b
                model.weights += dw
                model.visible_bias += da
                model.hidden_bias += db
                try:
                    model.validate()
                except FloatingPointError as exc:
                    raise DivergenceError(
                        f"non-finite parameter at epoch {epoch}; "
                        "reduce the learning rate") from exc

            result.n_epochs_run = epoch
            if stopper is not None and epoch % config.eval_every == 0:
                metric = float(stopper(model, epoch))
                record = TrainLogRecord(epoch, metric, _param_norm(model),
                                        time.perf_counter() - start)
                result.log.append(record)
                if csv_writer is not None:
                    csv_writer.writerow([record.epoch, repr(record.metric),
                                         repr(record.param_norm),
                                         repr(record.wall_time)])
                    log_file.flush()
                if metric > best_metric:
                    best_metric = metric
                    best_epoch = epoch
                    best_snapshot = model.copy()
                elif epoch - best_epoch >= config.patience_epochs:
                    break
    finally:
        if log_file is not None:
            log_file.close()

    if best_snapshot is not None:
        result.model = best_snapshot
        result.best_epoch = best_epoch
        result.best_metric = best_metric
    else:
        result.best_epoch = result.n_epochs_run
    return result
