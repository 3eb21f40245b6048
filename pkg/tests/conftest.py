"""Shared helpers: tiny model builders and hand-rolled enumeration oracles.

The brute-force functions here deliberately use explicit Python loops over
all joint configurations, independent of any vectorized code under test.
"""

import itertools

import numpy as np
import pytest

from maskedrbm.model import (RbmModel, VisibleLayout, binary_spec)


def make_binary_model(weights, visible_bias, hidden_bias, n_labels=1,
                      class_groups=()):
    weights = np.asarray(weights, dtype=np.float64)
    nv = weights.shape[0]
    n_features = nv - n_labels
    layout = VisibleLayout(np.arange(n_features), np.arange(n_features, nv),
                           class_groups)
    return RbmModel(weights, np.asarray(visible_bias, dtype=np.float64),
                    np.asarray(hidden_bias, dtype=np.float64),
                    tuple([binary_spec()] * nv), layout)


def random_binary_model(rng, n_visible, n_hidden, scale=1.0, n_labels=1):
    return make_binary_model(rng.uniform(-scale, scale, (n_visible, n_hidden)),
                             rng.uniform(-scale, scale, n_visible),
                             rng.uniform(-scale, scale, n_hidden),
                             n_labels=n_labels)


def hand_energy(w, a, b, v, h):
    """Explicit loop evaluation of the energy, independent of the library."""
    e = 0.0
    for i in range(len(v)):
        for j in range(len(h)):
            e -= v[i] * w[i][j] * h[j]
    for i in range(len(v)):
        e -= a[i] * v[i]
    for j in range(len(h)):
        e -= b[j] * h[j]
    return e


def enumerate_joint(model):
    """All (v, h) states with their unnormalized Boltzmann weights."""
    nv, nh = model.n_visible, model.n_hidden
    w = model.weights.tolist()
    a = model.visible_bias.tolist()
    b = model.hidden_bias.tolist()
    states, weights = [], []
    for v in itertools.product((0.0, 1.0), repeat=nv):
        for h in itertools.product((0.0, 1.0), repeat=nh):
            states.append((np.array(v), np.array(h)))
            weights.append(np.exp(-hand_energy(w, a, b, v, h)))
    return states, np.array(weights)


def brute_hidden_marginal(model, v):
    """P(h_j = 1 | v) by summing Boltzmann weights over hidden states."""
    states, weights = enumerate_joint(model)
    num = np.zeros(model.n_hidden)
    den = 0.0
    for (sv, sh), wt in zip(states, weights):
        if np.array_equal(sv, v):
            num += sh * wt
            den += wt
    return num / den


def brute_visible_marginal(model, h):
    """P(v_i = 1 | h) by summing Boltzmann weights over visible states."""
    states, weights = enumerate_joint(model)
    num = np.zeros(model.n_visible)
    den = 0.0
    for (sv, sh), wt in zip(states, weights):
        if np.array_equal(sh, h):
            num += sv * wt
            den += wt
    return num / den


def brute_conditional_visible_moments(model, values, observed):
    """E[v | v_o], E[v_i q_j | v_o] and E[q | v_o] over the joint enumeration."""
    states, weights = enumerate_joint(model)
    ev = np.zeros(model.n_visible)
    evh = np.zeros((model.n_visible, model.n_hidden))
    eq = np.zeros(model.n_hidden)
    den = 0.0
    for (sv, sh), wt in zip(states, weights):
        if np.array_equal(sv[observed], np.asarray(values)[observed]):
            ev += sv * wt
            evh += np.outer(sv, sh) * wt
            eq += sh * wt
            den += wt
    return ev / den, evh / den, eq / den


def brute_log_likelihood(model, values, observed):
    """log P(v_o) by plain joint enumeration."""
    states, weights = enumerate_joint(model)
    num = 0.0
    for (sv, _), wt in zip(states, weights):
        if np.array_equal(sv[observed], np.asarray(values)[observed]):
            num += wt
    return np.log(num) - np.log(weights.sum())


class StubRng:
    """Replays preset arrays for ``random`` calls; shapes are asserted."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self, shape=None):
        u = np.asarray(self.draws.pop(0), dtype=np.float64)
        assert shape is None or tuple(np.atleast_1d(shape)) == u.shape \
            or shape == u.shape, f"unexpected draw shape {shape} vs {u.shape}"
        return u

    def standard_normal(self, shape=None):
        return self.random(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
