"""Fixed-point mean-field imputation with pinned observations.

Missing coordinates are estimated by iterating self-consistent first-order
equations for the visible expectations and hidden activations; observed
coordinates are pinned and never recomputed. Multiple randomly initialized
runs are averaged to wash out attraction to the wrong fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .model import RbmModel

_CHUNK_CELLS = 4_000_000  # soft cap on rows*restarts*units per imputation slab


@dataclass
class MeanFieldState:
    """Marginal estimates: feature expectations m, label activation
    probabilities p, hidden activations q. Arrays may carry leading batch axes.
    """

    m: np.ndarray
    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class ImputationConfig:
    n_restarts: int = 10
    n_iterations: int = 10
    damping: float = 0.0
    convergence_tol: Optional[float] = None  # residual mode, used by tests
    max_tol_iterations: int = 1000

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


def _visible_vector(model: RbmModel, state: MeanFieldState) -> np.ndarray:
    s = np.empty(state.m.shape[:-1] + (model.n_visible,), dtype=np.float64)
    s[..., model.layout.feature_indices] = state.m
    s[..., model.layout.label_indices] = state.p
    return s


def mean_field_step(model: RbmModel, state: MeanFieldState, values,
                    observed, damping: float = 0.0) -> MeanFieldState:
    """One sweep: hidden activations from the current visible estimates (with
    pinned coordinates substituted), then unpinned visible coordinates from the
    fresh hidden activations.

    Binary visible units update through the logistic; Gaussian units take the
    affine form (sum_j w_ij q_j + a_i) * sigma_v_sq.
    """
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    s = _visible_vector(model, state)
    s = np.where(observed, values, s)
    q = expit(s @ model.weights + model.hidden_bias)
    if damping:
        q = (1.0 - damping) * q + damping * state.q
    c = q @ model.weights.T + model.visible_bias
    s_new = np.where(model.binary_mask, expit(c), c * model.sigma_sq)
    if damping:
        s_new = (1.0 - damping) * s_new + damping * s
    s_new = np.where(observed, values, s_new)
    return MeanFieldState(m=s_new[..., model.layout.feature_indices],
                          p=s_new[..., model.layout.label_indices],
                          q=q)


def _state_delta(a: MeanFieldState, b: MeanFieldState) -> float:
    return float(max(np.max(np.abs(a.m - b.m), initial=0.0),
                     np.max(np.abs(a.p - b.p), initial=0.0),
                     np.max(np.abs(a.q - b.q), initial=0.0)))


def mean_field_residual(model: RbmModel, state: MeanFieldState, values,
                        observed) -> float:
    """Max absolute change of one additional sweep (0 at a fixed point)."""
    return _state_delta(mean_field_step(model, state, values, observed), state)


def random_state(model: RbmModel, shape_prefix: tuple,
                 rng: np.random.Generator) -> MeanFieldState:
    """Random starting point: uniform [0,1] for probabilities and binary
    expectations, N(0, sigma_v_sq) for Gaussian expectations."""
    nv = model.n_visible
    s = rng.random(shape_prefix + (nv,))
    if not model.binary_mask.all():
        z = rng.standard_normal(shape_prefix + (nv,))
        s = np.where(model.binary_mask, s, z * np.sqrt(model.sigma_sq))
    q = rng.random(shape_prefix + (model.n_hidden,))
    return MeanFieldState(m=s[..., model.layout.feature_indices],
                          p=s[..., model.layout.label_indices],
                          q=q)


@dataclass
class ImputationResult:
    """Restart-averaged estimates.

    ``expectations`` matches the input shape; observed coordinates carry their
    observed values, missing features the averaged expectation, missing labels
    the averaged activation probability. ``label_probs`` is the label-column
    slice of ``expectations``.
    """

    expectations: np.ndarray
    label_probs: np.ndarray


def impute(model: RbmModel, values, observed, config: ImputationConfig,
           rng: np.random.Generator) -> ImputationResult:
    """Average ``n_restarts`` independent fixed-point runs per instance."""
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    values2 = np.atleast_2d(values)
    observed2 = np.atleast_2d(np.asarray(observed, dtype=bool))
    if values2.shape != observed2.shape or values2.shape[1] != model.n_visible:
        raise ValueError("sample/mask shape inconsistent with model layout")

    n, nv = values2.shape
    r = config.n_restarts
    chunk = max(1, _CHUNK_CELLS // max(1, r * nv))
    out = np.empty_like(values2)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        vals = values2[lo:hi, None, :]
        obs = observed2[lo:hi, None, :]
        state = random_state(model, (hi - lo, r), rng)
        if config.convergence_tol is None:
            for _ in range(config.n_iterations):
                state = mean_field_step(model, state, vals, obs, config.damping)
        else:
            for _ in range(config.max_tol_iterations):
                nxt = mean_field_step(model, state, vals, obs, config.damping)
                delta = _state_delta(nxt, state)
                state = nxt
                if delta <= config.convergence_tol:
                    break
        s = _visible_vector(model, state).mean(axis=1)
        if not np.isfinite(s).all():
            raise FloatingPointError("non-finite mean-field state")
        out[lo:hi] = np.where(observed2[lo:hi], values2[lo:hi], s)

    label_probs = out[:, model.layout.label_indices]
    if single:
        return ImputationResult(out[0], label_probs[0])
    return ImputationResult(out, label_probs)


def decode_multilabel(probs, threshold: float) -> np.ndarray:
    """Indicator decoding: label set to 1 iff its probability exceeds t."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(probs) > threshold).astype(np.int64)


def decode_multiclass(probs) -> np.ndarray:
    """One-hot at the argmax; ties resolve to the lowest index."""
    probs = np.asarray(probs)
    if probs.shape[-1] == 0:
        raise ValueError("empty class group")
    out = np.zeros_like(probs, dtype=np.int64)
    idx = np.argmax(probs, axis=-1)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1, axis=-1)
    return out


THRESHOLD_GRID = np.arange(1, 100) / 100.0


def learn_threshold(probs, labels, observed=None) -> float:
    """Grid-search the decision threshold maximizing accuracy on known labels.

    Only entries flagged observed participate; ties prefer the smallest t.
    """
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if observed is None:
        observed = np.ones(probs.shape, dtype=bool)
    observed = np.asarray(observed, dtype=bool).ravel()
    if not observed.any():
        raise ValueError("no observed label entries to fit the threshold")
    p, y = probs[observed], labels[observed]
    preds = p[None, :] > THRESHOLD_GRID[:, None]
    acc = (preds == (y[None, :] > 0.5)).mean(axis=1)
    return float(THRESHOLD_GRID[int(np.argmax(acc))])
