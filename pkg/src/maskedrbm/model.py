"""RBM parameterization: energy, unit priors, and closed-form conditionals.

The visible layer mixes binary units (values in {0, 1}) and real-valued units
carrying a centered Gaussian prior. Visible units are partitioned into feature
and label blocks; label units are always binary and may be grouped into
one-hot class blocks for multi-class problems.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit


class UnitKind(Enum):
    BINARY = "binary"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class VisibleUnitSpec:
    """Nature of a single visible unit.

    Binary units take values in {0, 1}. Gaussian units are real-valued with a
    centered prior of variance ``sigma_v_sq``.
    """

    kind: UnitKind
    sigma_v_sq: float = 1.0

    def __post_init__(self):
        if self.kind is UnitKind.GAUSSIAN and not self.sigma_v_sq > 0:
            raise ValueError("sigma_v_sq must be positive for Gaussian units")


def binary_spec() -> VisibleUnitSpec:
    return VisibleUnitSpec(UnitKind.BINARY)


def gaussian_spec(sigma_v_sq: float = 1.0) -> VisibleUnitSpec:
    return VisibleUnitSpec(UnitKind.GAUSSIAN, sigma_v_sq)


@dataclass(frozen=True, eq=False)
class VisibleLayout:
    """Partition of the visible layer into feature and label units.

    ``class_groups`` optionally marks disjoint one-hot blocks inside the label
    units (multi-class problems); an empty tuple means plain multi-label.
    """

    feature_indices: np.ndarray
    label_indices: np.ndarray
    class_groups: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "feature_indices",
                           np.asarray(self.feature_indices, dtype=np.intp))
        object.__setattr__(self, "label_indices",
                           np.asarray(self.label_indices, dtype=np.intp))
        object.__setattr__(self, "class_groups",
                           tuple(np.asarray(g, dtype=np.intp) for g in self.class_groups))
        f, l = set(self.feature_indices.tolist()), set(self.label_indices.tolist())
        if f & l:
            raise ValueError("feature and label indices overlap")
        n = len(f) + len(l)
        if (f | l) != set(range(n)):
            raise ValueError("feature and label indices must cover 0..n_visible-1")
        seen: set[int] = set()
        for g in self.class_groups:
            gset = set(g.tolist())
            if not gset <= l:
                raise ValueError("class group not contained in label indices")
            if gset & seen:
                raise ValueError("class groups overlap")
            seen |= gset

    @property
    def n_visible(self) -> int:
        return len(self.feature_indices) + len(self.label_indices)

    @property
    def n_features(self) -> int:
        return len(self.feature_indices)

    @property
    def n_labels(self) -> int:
        return len(self.label_indices)

    @property
    def is_multiclass(self) -> bool:
        return len(self.class_groups) > 0


@dataclass
class RbmModel:
    """Bipartite energy model with binary hidden units.

    ``weights`` has shape (n_visible, n_hidden); ``visible_bias`` and
    ``hidden_bias`` match the respective layer sizes. The model is treated as
    immutable during inference; only the training loop mutates parameters.
    """

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    unit_specs: tuple[VisibleUnitSpec, ...]
    layout: VisibleLayout
    # Per-unit caches derived from unit_specs (set in __post_init__).
    binary_mask: np.ndarray = field(init=False, repr=False)
    sigma_sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        nv, nh = self.weights.shape
        if self.visible_bias.shape != (nv,) or self.hidden_bias.shape != (nh,):
            raise ValueError("bias lengths inconsistent with weight matrix")
        if len(self.unit_specs) != nv:
            raise ValueError("unit_specs length inconsistent with weight matrix")
        if self.layout.n_visible != nv:
            raise ValueError("layout inconsistent with weight matrix")
        for i in self.layout.label_indices:
            if self.unit_specs[i].kind is not UnitKind.BINARY:
                raise ValueError("label units must be binary")
        self.binary_mask = np.array(
            [s.kind is UnitKind.BINARY for s in self.unit_specs], dtype=bool)
        self.sigma_sq = np.array(
            [1.0 if s.kind is UnitKind.BINARY else s.sigma_v_sq for s in self.unit_specs],
            dtype=np.float64)
        self.validate()

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    def validate(self):
        """Assert every parameter is finite; called after each training update."""
        if not (np.isfinite(self.weights).all()
                and np.isfinite(self.visible_bias).all()
                and np.isfinite(self.hidden_bias).all()):
            raise FloatingPointError("non-finite model parameter")

    def copy(self) -> "RbmModel":
        return RbmModel(self.weights.copy(), self.visible_bias.copy(),
                        self.hidden_bias.copy(), self.unit_specs, self.layout)


def initialize_model(layout: VisibleLayout, unit_specs, n_hidden: int,
                     rng: np.random.Generator, weight_scale: float = 0.01) -> RbmModel:
    """Fresh model: small zero-mean normal weights, zero biases."""
    nv = layout.n_visible
    w = rng.normal(0.0, weight_scale, size=(nv, n_hidden))
    return RbmModel(w, np.zeros(nv), np.zeros(n_hidden), tuple(unit_specs), layout)


@dataclass
class ParamStats:
    """A statistics (or gradient) triple aligned with the model parameters."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __sub__(self, other: "ParamStats") -> "ParamStats":
        return ParamStats(self.weights - other.weights,
                          self.visible_bias - other.visible_bias,
                          self.hidden_bias - other.hidden_bias)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(),
                               self.visible_bias.ravel(),
                               self.hidden_bias.ravel()])


def energy(model: RbmModel, v: np.ndarray, h: np.ndarray) -> np.ndarray | float:
    """-sum_ij v_i w_ij h_j - sum_i a_i v_i - sum_j b_j h_j.

    Accepts single configurations or batches with matching leading dims.
    """
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape[-1] != model.n_visible or h.shape[-1] != model.n_hidden:
        raise ValueError("configuration shape inconsistent with model")
    interaction = ((v @ model.weights) * h).sum(axis=-1)
    e = -interaction - v @ model.visible_bias - h @ model.hidden_bias
    return float(e) if np.ndim(e) == 0 else e


def hidden_conditional(model: RbmModel, v: np.ndarray) -> np.ndarray:
    """Activation probabilities q_j = sigmoid(sum_i v_i w_ij + b_j)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.n_visible:
        raise ValueError("visible configuration shape inconsistent with model")
    return expit(v @ model.weights + model.hidden_bias)


@dataclass
class VisibleConditional:
    """Per-unit sampling distribution of the visible layer given hidden values.

    ``mean`` holds the Bernoulli activation probability for binary units and
    the normal mean for Gaussian units; ``variance`` is zero for binary units.
    """

    mean: np.ndarray
    variance: np.ndarray


def visible_conditional(model: RbmModel, h: np.ndarray) -> VisibleConditional:
    """Closed-form conditional over visible units given a hidden configuration.

    Binary units activate with probability sigmoid(sum_j w_ij h_j + a_i);
    Gaussian units are normal with mean (sum_j w_ij h_j + a_i) * sigma_v_sq
    and variance sigma_v_sq.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != model.n_hidden:
        raise ValueError("hidden configuration shape inconsistent with model")
    c = h @ model.weights.T + model.visible_bias
    mean = np.where(model.binary_mask, expit(c), c * model.sigma_sq)
    variance = np.where(model.binary_mask, 0.0, model.sigma_sq)
    variance = np.broadcast_to(variance, mean.shape).copy()
    return VisibleConditional(mean, variance)


def sample_hidden(q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli draw per hidden unit."""
    return (rng.random(np.shape(q)) < q).astype(np.float64)


def sample_visible(model: RbmModel, cond: VisibleConditional,
                   rng: np.random.Generator) -> np.ndarray:
    """Bernoulli draw per binary unit, normal draw per Gaussian unit."""
    shape = np.shape(cond.mean)
    out = np.empty(shape, dtype=np.float64)
    if model.binary_mask.any():
        u = rng.random(shape)
        np.copyto(out, (u < cond.mean).astype(np.float64))
    if not model.binary_mask.all():
        z = rng.standard_normal(shape)
        gaussian = cond.mean + np.sqrt(cond.variance) * z
        out = np.where(model.binary_mask, out, gaussian)
    return out


_FORMAT_VERSION = 1


def save_model(path, model: RbmModel):
    """Serialize to a self-describing npz container (64-bit floats, bit-exact)."""
    kinds = np.array([s.kind.value for s in model.unit_specs])
    sigma = np.array([s.sigma_v_sq for s in model.unit_specs], dtype=np.float64)
    groups = json.dumps([g.tolist() for g in model.layout.class_groups])
    np.savez(path,
             format_version=np.array(_FORMAT_VERSION),
             weights=model.weights,
             visible_bias=model.visible_bias,
             hidden_bias=model.hidden_bias,
             unit_kinds=kinds,
             sigma_v_sq=sigma,
             feature_indices=model.layout.feature_indices,
             label_indices=model.layout.label_indices,
             class_groups=np.array(groups))


def load_model(path) -> RbmModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        specs = tuple(
            VisibleUnitSpec(UnitKind(kind), float(s))
            for kind, s in zip(data["unit_kinds"], data["sigma_v_sq"]))
        layout = VisibleLayout(
            data["feature_indices"], data["label_indices"],
            tuple(np.array(g, dtype=np.intp)
                  for g in json.loads(str(data["class_groups"]))))
        return RbmModel(data["weights"], data["visible_bias"],
                        data["hidden_bias"], specs, layout)
