"""Brute-force reference quantities for tiny all-binary models.

Everything here enumerates visible configurations in log-space (hidden units
are summed per-unit in closed form, which is exact) and exists solely as
ground truth for tests. No attention is paid to performance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .model import ParamStats, RbmModel, UnitKind

DEFAULT_BUDGET = 20


class BudgetExceededError(ValueError):
    """Model too large to enumerate."""


@dataclass(frozen=True)
class EnumerationBudget:
    max_total_binary_units: int = DEFAULT_BUDGET


def _require_enumerable(model: RbmModel, budget: int):
    for spec in model.unit_specs:
        if spec.kind is not UnitKind.BINARY:
            raise ValueError("oracle handles all-binary models only")
    total = model.n_visible + model.n_hidden
    if total > budget:
        raise BudgetExceededError(
            f"{total} binary units exceed enumeration budget {budget}")


def _binary_states(n: int) -> np.ndarray:
    ints = np.arange(2 ** n, dtype=np.int64)[:, None]
    return ((ints >> np.arange(n)[None, :]) & 1).astype(np.float64)


def _completions(model: RbmModel, values, observed) -> np.ndarray:
    """All visible configurations consistent with the observed coordinates."""
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    missing = np.flatnonzero(~observed)
    states = np.tile(np.where(observed, values, 0.0), (2 ** len(missing), 1))
    states[:, missing] = _binary_states(len(missing))
    return states


def _log_weights(model: RbmModel, states: np.ndarray) -> np.ndarray:
    """log of the hidden-summed unnormalized weight of each visible state."""
    field = states @ model.weights + model.hidden_bias
    return states @ model.visible_bias + np.logaddexp(0.0, field).sum(axis=1)


def exact_partition(model: RbmModel, budget: int = DEFAULT_BUDGET) -> float:
    """log Z by enumeration over all (visible, hidden) configurations."""
    _require_enumerable(model, budget)
    states = _completions(model, np.zeros(model.n_visible),
                          np.zeros(model.n_visible, dtype=bool))
    return float(logsumexp(_log_weights(model, states)))


def exact_log_observed_partition(model: RbmModel, values, observed,
                                 budget: int = DEFAULT_BUDGET) -> float:
    """log of the unnormalized probability mass of the observed coordinates."""
    _require_enumerable(model, budget)
    states = _completions(model, values, observed)
    return float(logsumexp(_log_weights(model, states)))


def exact_log_likelihood(model: RbmModel, values, observed,
                         budget: int = DEFAULT_BUDGET) -> float:
    """Exact log P(v_o) of a partially observed visible configuration."""
    return (exact_log_observed_partition(model, values, observed, budget)
            - exact_partition(model, budget))


def exact_observed_moments(model: RbmModel, values, observed,
                           budget: int = DEFAULT_BUDGET) -> ParamStats:
    """E[v_i h_j | v_o], E[v_i | v_o], E[h_j | v_o] by enumeration.

    With nothing observed these are the plain model moments under the
    Boltzmann measure.
    """
    _require_enumerable(model, budget)
    states = _completions(model, values, observed)
    logw = _log_weights(model, states)
    post = np.exp(logw - logsumexp(logw))
    q = expit(states @ model.weights + model.hidden_bias)
    vh = np.einsum("s,si,sj->ij", post, states, q)
    return ParamStats(vh, post @ states, post @ q)


def exact_lossy_gradient(model: RbmModel, values, observed,
                         budget: int = DEFAULT_BUDGET) -> ParamStats:
    """Exact gradient of log P(v_o) with respect to all parameters."""
    observed = np.asarray(observed, dtype=bool)
    pos = exact_observed_moments(model, values, observed, budget)
    neg = exact_observed_moments(model, values, np.zeros_like(observed), budget)
    return pos - neg


def exact_conditional_marginals(model: RbmModel, values, observed,
                                budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """P(v_i = 1 | v_o) per visible unit (observed coordinates keep their value)."""
    return exact_observed_moments(model, values, observed, budget).visible_bias
