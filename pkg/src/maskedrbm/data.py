"""Dataset ingestion, visible-layer encoding, masking, and splitting.

A dataset keeps the full value matrix (ground truth for the masked cells is
retained for evaluation) next to a boolean observation mask. Anything that
trains or imputes must receive the view produced by ``masked_view``, which
replaces hidden cells, so that ground truth never leaks past the metrics.
Masks are drawn before any value is read, making the missingness independent
of the data.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import UnitKind, VisibleLayout, VisibleUnitSpec, binary_spec, gaussian_spec
from .seeding import derive_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed input file (message carries the offending location)."""


@dataclass(frozen=True)
class MaskSpec:
    """Masking rates: q_fea over feature cells, q_label over label cells
    (individual cells for multi-label, whole class groups for multi-class)."""

    q_fea: float
    q_label: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.q_fea <= 1.0 or not 0.0 <= self.q_label <= 1.0:
            raise ValueError("masking rates must lie in [0, 1]")


@dataclass(frozen=True)
class FeatureStats:
    """Per-column standardization applied at load time (identity for binary
    columns). Both arrays span the full visible width."""

    mean: np.ndarray
    scale: np.ndarray

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.scale

    def destandardize(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean

    @staticmethod
    def identity(n_visible: int) -> "FeatureStats":
        return FeatureStats(np.zeros(n_visible), np.ones(n_visible))


@dataclass
class IncompleteDataset:
    values: np.ndarray    # (n_instances, n_visible) ground truth
    observed: np.ndarray  # bool, same shape
    layout: VisibleLayout
    unit_specs: tuple[VisibleUnitSpec, ...]
    feature_stats: FeatureStats

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.shape != self.observed.shape:
            raise ValueError("values and mask shapes differ")
        if self.values.shape[1] != self.layout.n_visible:
            raise ValueError("column count inconsistent with layout")
        _check_group_atomicity(self.observed, self.layout)

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_visible(self) -> int:
        return self.values.shape[1]

    def is_fully_observed(self) -> bool:
        return bool(self.observed.all())

    def masked_view(self, fill: float = 0.0) -> "IncompleteDataset":
        """Copy with every hidden cell's value replaced by ``fill``.

        This is the only form training and imputation code should see; pass
        ``fill=nan`` to poison hidden cells when checking that nothing reads
        them.
        """
        return replace(self, values=np.where(self.observed, self.values, fill),
                       observed=self.observed.copy())

    def subset(self, rows) -> "IncompleteDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return replace(self, values=self.values[rows], observed=self.observed[rows])

    def with_mask(self, observed: np.ndarray) -> "IncompleteDataset":
        return replace(self, values=self.values.copy(),
                       observed=np.asarray(observed, dtype=bool))


def _check_group_atomicity(observed: np.ndarray, layout: VisibleLayout):
    for g in layout.class_groups:
        block = observed[:, g]
        partial = block.any(axis=1) & ~block.all(axis=1)
        if partial.any():
            raise ValueError(
                f"instance {int(np.flatnonzero(partial)[0])} has a partially "
                "masked class group")


def dataset_from_arrays(features: np.ndarray, labels: np.ndarray,
                        feature_kind: UnitKind = UnitKind.BINARY,
                        multiclass: bool = False,
                        sigma_v_sq: float = 1.0,
                        standardize: bool = True) -> IncompleteDataset:
    """Build a fully observed dataset from plain arrays.

    Label columns must be {0,1}; with ``multiclass`` they form one one-hot
    group. Gaussian features are standardized column-wise unless disabled.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[0] != features.shape[0]:
        raise ValueError("feature and label row counts differ")
    n, n_f = features.shape
    n_l = labels.shape[1]
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("label values must be 0 or 1")
    groups = (np.arange(n_f, n_f + n_l),) if multiclass else ()
    layout = VisibleLayout(np.arange(n_f), np.arange(n_f, n_f + n_l), groups)
    if feature_kind is UnitKind.BINARY:
        specs = tuple([binary_spec()] * (n_f + n_l))
        stats = FeatureStats.identity(n_f + n_l)
        values = np.hstack([features, labels])
    else:
        specs = tuple([gaussian_spec(sigma_v_sq)] * n_f + [binary_spec()] * n_l)
        mean = np.zeros(n_f + n_l)
        scale = np.ones(n_f + n_l)
        if standardize and n > 0:
            mean[:n_f] = features.mean(axis=0)
            sd = features.std(axis=0)
            scale[:n_f] = np.where(sd > 0, sd, 1.0)
        stats = FeatureStats(mean, scale)
        values = stats.standardize(np.hstack([features, labels]))
    return IncompleteDataset(values, np.ones_like(values, dtype=bool),
                             layout, specs, stats)


# ---------------------------------------------------------------------------
# IDX image/label files


def _read_be32(data: bytes, offset: int, path) -> int:
    if offset + 4 > len(data):
        raise DataFormatError(f"{path}: truncated at byte {len(data)}")
    return struct.unpack_from(">i", data, offset)[0]


def load_mnist_idx(images_path, labels_path,
                   binarize_threshold: int = 128) -> IncompleteDataset:
    """Load an IDX image/label pair as a fully observed multi-class dataset.

    Pixels binarize at the given byte threshold; labels one-hot into a single
    ten-unit class group.
    """
    raw = Path(images_path).read_bytes()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad magic {magic:#010x} at byte 0")
    count = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    n_pixels = rows * cols
    if len(raw) < 16 + count * n_pixels:
        raise DataFormatError(f"{images_path}: truncated at byte {len(raw)}, "
                              f"expected {16 + count * n_pixels}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * n_pixels,
                           offset=16).reshape(count, n_pixels)

    raw_l = Path(labels_path).read_bytes()
    magic_l = _read_be32(raw_l, 0, labels_path)
    if magic_l != IDX_LABELS_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad magic {magic_l:#010x} at byte 0")
    count_l = _read_be32(raw_l, 4, labels_path)
    if len(raw_l) < 8 + count_l:
        raise DataFormatError(f"{labels_path}: truncated at byte {len(raw_l)}, "
                              f"expected {8 + count_l}")
    if count_l != count:
        raise DataFormatError(
            f"{labels_path}: {count_l} labels for {count} images")
    digits = np.frombuffer(raw_l, dtype=np.uint8, count=count_l, offset=8)
    if count and digits.max(initial=0) > 9:
        bad = int(np.argmax(digits > 9))
        raise DataFormatError(f"{labels_path}: label {digits[bad]} out of "
                              f"range at item {bad}")

    feats = (pixels >= binarize_threshold).astype(np.float64)
    onehot = np.zeros((count, 10))
    onehot[np.arange(count), digits] = 1.0
    layout = VisibleLayout(np.arange(n_pixels),
                           np.arange(n_pixels, n_pixels + 10),
                           (np.arange(n_pixels, n_pixels + 10),))
    specs = tuple([binary_spec()] * (n_pixels + 10))
    values = np.hstack([feats, onehot])
    return IncompleteDataset(values, np.ones_like(values, dtype=bool), layout,
                             specs, FeatureStats.identity(n_pixels + 10))


def write_idx_images(path, images: np.ndarray):
    """Write a (count, rows, cols) uint8 array in IDX image format."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, images.shape[0],
                            images.shape[1], images.shape[2]))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CSV with a column-role schema


def load_schema(path) -> dict[str, str]:
    """Column roles from a flat ``name = role`` file ('#' starts a comment)."""
    schema: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected 'column = role'")
        name, role = (part.strip() for part in line.split("=", 1))
        if role not in ("feature", "label", "class"):
            raise DataFormatError(
                f"{path}:{lineno}: unknown role {role!r} for column {name!r}")
        schema[name] = role
    return schema


def load_csv(path, schema: dict[str, str]) -> IncompleteDataset:
    """Load a headered CSV as a fully observed dataset.

    Feature columns become standardized Gaussian units; label columns are
    validated as {0,1}; each class column expands into a one-hot group over
    its sorted distinct values. Visible order is features, then labels, then
    class groups, each in header order.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: missing header row") from None
        rows = list(reader)
    for col in header:
        if col not in schema:
            raise DataFormatError(f"{path}: unknown column {col!r}")
    cells = np.empty((len(rows), len(header)), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        try:
            cells[r] = row
        except ValueError:
            for c, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: non-numeric cell {cell!r} at row {r + 2}, "
                        f"column {header[c]!r}") from None
            raise

    feat_cols = [i for i, c in enumerate(header) if schema[c] == "feature"]
    label_cols = [i for i, c in enumerate(header) if schema[c] == "label"]
    class_cols = [i for i, c in enumerate(header) if schema[c] == "class"]

    for i in label_cols:
        bad = ~np.isin(cells[:, i], (0.0, 1.0))
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise DataFormatError(
                f"{path}: label value {cells[r, i]} outside {{0,1}} at row "
                f"{r + 2}, column {header[i]!r}")

    blocks = [cells[:, feat_cols]]
    n_f = len(feat_cols)
    label_width = len(label_cols)
    groups = []
    blocks.append(cells[:, label_cols])
    offset = n_f + label_width
    for i in class_cols:
        classes = np.unique(cells[:, i])
        onehot = (cells[:, i][:, None] == classes[None, :]).astype(np.float64)
        blocks.append(onehot)
        groups.append(np.arange(offset, offset + len(classes)))
        offset += len(classes)

    values = np.hstack(blocks) if blocks else np.empty((len(rows), 0))
    n_visible = values.shape[1]
    layout = VisibleLayout(np.arange(n_f), np.arange(n_f, n_visible),
                           tuple(groups))
    specs = tuple([gaussian_spec()] * n_f + [binary_spec()] * (n_visible - n_f))
    mean = np.zeros(n_visible)
    scale = np.ones(n_visible)
    if len(rows) > 0 and n_f > 0:
        mean[:n_f] = values[:, :n_f].mean(axis=0)
        sd = values[:, :n_f].std(axis=0)
        scale[:n_f] = np.where(sd > 0, sd, 1.0)
    stats = FeatureStats(mean, scale)
    return IncompleteDataset(stats.standardize(values),
                             np.ones_like(values, dtype=bool), layout, specs,
                             stats)


# ---------------------------------------------------------------------------
# Masking and splitting


def _mask_cells(observed: np.ndarray, columns: np.ndarray, count: int,
                rng: np.random.Generator):
    n = observed.shape[0]
    if count == 0 or len(columns) == 0 or n == 0:
        return
    flat = rng.choice(n * len(columns), size=count, replace=False)
    observed[flat // len(columns), columns[flat % len(columns)]] = False


def apply_mask(dataset: IncompleteDataset, spec: MaskSpec) -> IncompleteDataset:
    """Hide an exact count of uniformly chosen entries.

    Feature cells: round(q_fea * n * |features|). Labels: round(q_label * n *
    |labels|) individual cells, or, when class groups are present,
    round(q_label * n * n_groups) whole groups hidden atomically. The mask is
    drawn without reading any value.
    """
    rng = np.random.default_rng(spec.seed)
    n = dataset.n_instances
    layout = dataset.layout
    observed = np.ones_like(dataset.observed)
    n_feature_cells = round(spec.q_fea * n * layout.n_features)
    _mask_cells(observed, layout.feature_indices, n_feature_cells, rng)
    if layout.is_multiclass:
        n_groups = len(layout.class_groups)
        n_masked = round(spec.q_label * n * n_groups)
        if n_masked and n:
            flat = rng.choice(n * n_groups, size=n_masked, replace=False)
            for pick in flat:
                observed[pick // n_groups,
                         layout.class_groups[pick % n_groups]] = False
        loose = np.setdiff1d(layout.label_indices,
                             np.concatenate(layout.class_groups))
        _mask_cells(observed, loose, round(spec.q_label * n * len(loose)), rng)
    else:
        n_label_cells = round(spec.q_label * n * layout.n_labels)
        _mask_cells(observed, layout.label_indices, n_label_cells, rng)
    return dataset.with_mask(observed)


def split_inductive(dataset: IncompleteDataset, train_fraction: float,
                    seed: int, mask_spec: MaskSpec
                    ) -> tuple[IncompleteDataset, IncompleteDataset]:
    """Row-wise split into a masked training set and an incomplete test set.

    The training rows are masked per ``mask_spec``; test rows get their
    features masked at the same q_fea and every label entry hidden.
    Standardization statistics are recomputed on the training rows only and
    applied to both parts.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if not dataset.is_fully_observed():
        raise ValueError("split requires a fully observed dataset")
    n = dataset.n_instances
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = round(train_fraction * n)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])

    raw = dataset.feature_stats.destandardize(dataset.values)
    gaussian = np.array([s.kind is UnitKind.GAUSSIAN for s in dataset.unit_specs])
    mean = np.zeros(dataset.n_visible)
    scale = np.ones(dataset.n_visible)
    if gaussian.any() and n_train > 0:
        cols = np.flatnonzero(gaussian)
        mean[cols] = raw[train_rows][:, cols].mean(axis=0)
        sd = raw[train_rows][:, cols].std(axis=0)
        scale[cols] = np.where(sd > 0, sd, 1.0)
    stats = FeatureStats(mean, scale)

    def rebuilt(rows):
        return IncompleteDataset(stats.standardize(raw[rows]),
                                 np.ones((len(rows), dataset.n_visible), bool),
                                 dataset.layout, dataset.unit_specs, stats)

    train = apply_mask(rebuilt(train_rows), mask_spec)
    test_spec = MaskSpec(mask_spec.q_fea, 0.0,
                         derive_seed(mask_spec.seed, "test-features"))
    test = apply_mask(rebuilt(test_rows), test_spec)
    test.observed[:, dataset.layout.label_indices] = False
    return train, test


# ---------------------------------------------------------------------------
# Mask replay files


def save_mask(path, dataset: IncompleteDataset):
    """Write the masked (row, column) coordinates as CSV, row-major order."""
    coords = np.argwhere(~dataset.observed)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "column"])
        writer.writerows(coords.tolist())


def load_mask(path, shape: tuple[int, int]) -> np.ndarray:
    """Read a mask CSV back into a boolean observation matrix."""
    observed = np.ones(shape, dtype=bool)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["row", "column"]:
            raise DataFormatError(f"{path}: expected 'row,column' header")
        for lineno, row in enumerate(reader, 2):
            try:
                r, c = int(row[0]), int(row[1])
                observed[r, c] = False
            except (IndexError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad coordinate row "
                                      f"{row!r}") from exc
    return observed
