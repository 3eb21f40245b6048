"""Protocol orchestration: load, mask, train, impute, score, aggregate.

Every stage seed is derived from (base_seed, grid cell, repeat), so any cell
can be replayed independently and two runs of the same config produce
byte-identical aggregate files. Ground truth stays in the loaded dataset;
training and imputation only ever see ``masked_view`` copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (IncompleteDataset, MaskSpec, apply_mask, load_csv,
                   load_mnist_idx, load_schema, save_mask, split_inductive)
from .meanfield import (ImputationConfig, decode_multiclass, decode_multilabel,
                        impute, learn_threshold)
from .metrics import (AggregateReport, METRIC_NAMES, MetricsReport,
                      accuracy_multiclass, aggregate, averaged_auc,
                      hamming_accuracy, micro_auc, rmse)
from .model import RbmModel, save_model
from .seeding import derive_seed
from .training import TrainConfig, train


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    dataset: str
    schema: Optional[str] = None
    dataset_labels: Optional[str] = None
    mode: str = "transductive"
    q_fea: tuple[float, ...] = (0.5,)
    q_label: tuple[float, ...] = (0.3,)
    n_repeats: int = 10
    base_seed: int = 0
    out_dir: Optional[str] = None
    limit: Optional[int] = None
    train_fraction: float = 0.7
    train: TrainConfig = field(default_factory=TrainConfig)
    imputation: ImputationConfig = field(default_factory=ImputationConfig)

    def __post_init__(self):
        if not self.q_fea or not self.q_label:
            raise ConfigError("masking-rate grids must be nonempty")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        if self.mode not in ("transductive", "inductive"):
            raise ConfigError(f"unknown mode {self.mode!r}")


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


_TRAIN_KEYS = {
    "learning_rate": float, "minibatch_size": int, "k_gibbs": int,
    "n_hidden": int, "negative_phase": str, "n_persistent_chains": int,
    "max_epochs": int, "patience_epochs": int, "eval_every": int,
    "momentum": float, "weight_decay": float, "weight_scale": float,
}
_IMPUTE_KEYS = {"n_restarts": int, "n_iterations": int, "damping": float}
_TOP_KEYS = {
    "dataset": str, "schema": str, "dataset_labels": str, "mode": str,
    "n_repeats": int, "base_seed": int, "out_dir": str, "limit": int,
    "train_fraction": float,
}


def build_config(options: dict[str, str]) -> ExperimentConfig:
    """Typed ExperimentConfig from flat string options (file or CLI)."""
    top: dict = {}
    train_kw: dict = {}
    impute_kw: dict = {}
    try:
        for key, raw in options.items():
            if raw is None:
                continue
            if key in ("q_fea", "q_label"):
                top[key] = tuple(float(x) for x in str(raw).split(",") if x != "")
            elif key in _TOP_KEYS:
                top[key] = _TOP_KEYS[key](raw)
            elif key in _TRAIN_KEYS:
                train_kw[key] = _TRAIN_KEYS[key](raw)
            elif key in _IMPUTE_KEYS:
                impute_kw[key] = _IMPUTE_KEYS[key](raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        config = ExperimentConfig(train=TrainConfig(**train_kw),
                                  imputation=ImputationConfig(**impute_kw),
                                  **top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return config


def load_dataset(config: ExperimentConfig) -> IncompleteDataset:
    """Load per the configured format and apply the optional row limit."""
    if config.dataset_labels is not None:
        dataset = load_mnist_idx(config.dataset, config.dataset_labels)
    else:
        if config.schema is None:
            raise ConfigError("csv datasets require a schema file")
        dataset = load_csv(config.dataset, load_schema(config.schema))
    if config.limit is not None and config.limit < dataset.n_instances:
        rng = np.random.default_rng(
            derive_seed(config.base_seed, "limit", config.limit))
        rows = np.sort(rng.choice(dataset.n_instances, size=config.limit,
                                  replace=False))
        dataset = dataset.subset(rows)
    return dataset


@dataclass
class RepeatArtifacts:
    report: MetricsReport
    model: Optional[RbmModel] = None
    threshold: Optional[float] = None
    best_epoch: int = 0
    n_epochs_run: int = 0


@dataclass
class CellResult:
    q_fea: float
    q_label: float
    reports: list[MetricsReport] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def aggregated(self) -> Optional[AggregateReport]:
        return aggregate(self.reports) if self.reports else None


def _masked_label_cells(dataset: IncompleteDataset) -> np.ndarray:
    cells = np.zeros_like(dataset.observed)
    cols = dataset.layout.label_indices
    cells[:, cols] = ~dataset.observed[:, cols]
    return cells


def _masked_feature_cells(dataset: IncompleteDataset) -> np.ndarray:
    cells = np.zeros_like(dataset.observed)
    cols = dataset.layout.feature_indices
    cells[:, cols] = ~dataset.observed[:, cols]
    return cells


def _group_scores(truth_values, label_probs, layout, group):
    """Class scores and true class indices for one one-hot group."""
    label_pos = {int(i): k for k, i in enumerate(layout.label_indices)}
    cols = [label_pos[int(i)] for i in group]
    return label_probs[:, cols], np.argmax(truth_values[:, group], axis=1)


def _label_metrics(truth_values, observed, layout, label_probs,
                   threshold: Optional[float]) -> dict:
    """Classification scores over the masked label entries (multi-label) or
    masked class-group instances (multi-class)."""
    out: dict = {}
    if layout.is_multiclass:
        truth_all, pred_all, auc_parts, n_all = [], [], [], 0
        for group in layout.class_groups:
            masked_rows = ~observed[:, group].any(axis=1)
            if not masked_rows.any():
                continue
            scores, true_cls = _group_scores(truth_values[masked_rows],
                                             label_probs[masked_rows],
                                             layout, group)
            pred = decode_multiclass(scores)
            auc_parts.append((averaged_auc(scores, true_cls),
                              int(masked_rows.sum())))
            truth_all.append(true_cls)
            pred_all.append(np.argmax(pred, axis=1))
            n_all += int(masked_rows.sum())
        if n_all:
            out["averaged_auc"] = float(
                sum(a * n for a, n in auc_parts) / n_all)
            out["accuracy"] = accuracy_multiclass(np.concatenate(pred_all),
                                                  np.concatenate(truth_all))
    else:
        cells = np.zeros_like(observed)
        cols = layout.label_indices
        cells[:, cols] = ~observed[:, cols]
        if cells.any():
            probs_full = np.zeros_like(truth_values)
            probs_full[:, cols] = label_probs
            out["micro_auc"] = micro_auc(probs_full, truth_values, cells)
            if threshold is not None:
                decoded = decode_multilabel(probs_full, threshold)
                out["hamming_accuracy"] = hamming_accuracy(
                    decoded, truth_values, cells)
    return out


def fit_threshold(model: RbmModel, view: IncompleteDataset,
                  imputation: ImputationConfig, seed: int) -> float:
    """Decision threshold from label-blind imputation against observed labels.

    The model's label probabilities are recomputed with every label hidden so
    that observed entries get genuine predictions to score against.
    """
    blind_observed = view.observed.copy()
    blind_observed[:, view.layout.label_indices] = False
    rng = np.random.default_rng(derive_seed(seed, "threshold"))
    result = impute(model, view.values, blind_observed, imputation, rng)
    label_cols = view.layout.label_indices
    return learn_threshold(result.label_probs, view.values[:, label_cols],
                           view.observed[:, label_cols])


def _fresh_log_path(cell_dir: Optional[Path], repeat: int) -> Optional[Path]:
    if cell_dir is None:
        return None
    path = cell_dir / f"training_log_{repeat}.csv"
    path.unlink(missing_ok=True)
    return path


def _make_stopper(truth: IncompleteDataset, view: IncompleteDataset,
                  imputation: ImputationConfig, seed: int):
    """Transductive label AUC on the view's masked labels vs hidden truth."""
    layout = truth.layout
    if layout.is_multiclass:
        any_masked = any((~view.observed[:, g].any(axis=1)).any()
                         for g in layout.class_groups)
    else:
        any_masked = bool(_masked_label_cells(view).any())
    if not any_masked or layout.n_labels == 0:
        return None

    def stopper(model: RbmModel, epoch: int) -> float:
        rng = np.random.default_rng(derive_seed(seed, "stop", epoch))
        result = impute(model, view.values, view.observed, imputation, rng)
        scored = _label_metrics(truth.values, view.observed, layout,
                                result.label_probs, threshold=None)
        key = "averaged_auc" if layout.is_multiclass else "micro_auc"
        return scored.get(key, float("-inf"))

    return stopper


def _score_transductive(truth: IncompleteDataset, masked: IncompleteDataset,
                        expectations, label_probs,
                        threshold: Optional[float]) -> MetricsReport:
    report = MetricsReport()
    fcells = _masked_feature_cells(masked)
    if fcells.any():
        stats = truth.feature_stats
        report.rmse = rmse(stats.destandardize(truth.values),
                           stats.destandardize(expectations), fcells)
        report.rmse_standardized = rmse(truth.values, expectations, fcells)
    scored = _label_metrics(truth.values, masked.observed, truth.layout,
                            label_probs, threshold)
    for key, value in scored.items():
        setattr(report, key, value)
    return report


def _run_repeat_transductive(dataset: IncompleteDataset, q_fea: float,
                             q_label: float, repeat: int,
                             config: ExperimentConfig,
                             cell_dir: Optional[Path]) -> RepeatArtifacts:
    seed = derive_seed(config.base_seed, q_fea, q_label, repeat)
    masked = apply_mask(dataset, MaskSpec(q_fea, q_label, seed))
    view = masked.masked_view()
    train_cfg = replace(config.train, seed=derive_seed(seed, "train"))
    stopper = _make_stopper(dataset, view, config.imputation, seed)
    log_path = _fresh_log_path(cell_dir, repeat)
    result = train(view, train_cfg, stopper, log_path)
    rng = np.random.default_rng(derive_seed(seed, "impute"))
    imputed = impute(result.model, view.values, view.observed,
                     config.imputation, rng)
    threshold = None
    if not dataset.layout.is_multiclass and dataset.layout.n_labels > 0:
        threshold = fit_threshold(result.model, view, config.imputation, seed)
    report = _score_transductive(dataset, masked, imputed.expectations,
                                 imputed.label_probs, threshold)
    if cell_dir:
        save_model(cell_dir / f"model_{repeat}.npz", result.model)
        save_mask(cell_dir / f"mask_{repeat}.csv", masked)
    return RepeatArtifacts(report, result.model, threshold,
                           result.best_epoch, result.n_epochs_run)


def _run_repeat_inductive(dataset: IncompleteDataset, q_fea: float,
                          q_label: float, repeat: int,
                          config: ExperimentConfig,
                          cell_dir: Optional[Path]) -> RepeatArtifacts:
    seed = derive_seed(config.base_seed, q_fea, q_label, repeat)
    mask_spec = MaskSpec(q_fea, q_label, derive_seed(seed, "mask"))
    train_ds, test_ds = split_inductive(dataset, config.train_fraction,
                                        derive_seed(seed, "split"), mask_spec)
    train_view = train_ds.masked_view()
    train_cfg = replace(config.train, seed=derive_seed(seed, "train"))
    stopper = _make_stopper(train_ds, train_view, config.imputation, seed)
    log_path = _fresh_log_path(cell_dir, repeat)
    result = train(train_view, train_cfg, stopper, log_path)
    threshold = None
    if not dataset.layout.is_multiclass and dataset.layout.n_labels > 0:
        threshold = fit_threshold(result.model, train_view, config.imputation,
                                  seed)
    test_view = test_ds.masked_view()
    rng = np.random.default_rng(derive_seed(seed, "impute"))
    imputed = impute(result.model, test_view.values, test_view.observed,
                     config.imputation, rng)
    report = MetricsReport()
    scored = _label_metrics(test_ds.values, test_ds.observed, test_ds.layout,
                            imputed.label_probs, threshold)
    for key, value in scored.items():
        setattr(report, key, value)
    if cell_dir:
        save_model(cell_dir / f"model_{repeat}.npz", result.model)
        save_mask(cell_dir / f"mask_train_{repeat}.csv", train_ds)
        save_mask(cell_dir / f"mask_test_{repeat}.csv", test_ds)
    return RepeatArtifacts(report, result.model, threshold,
                           result.best_epoch, result.n_epochs_run)


def _run_grid(config: ExperimentConfig, dataset: Optional[IncompleteDataset],
              repeat_fn) -> list[CellResult]:
    if dataset is None:
        dataset = load_dataset(config)
    out_dir = Path(config.out_dir) if config.out_dir else None
    results = []
    for q_fea in config.q_fea:
        for q_label in config.q_label:
            cell = CellResult(q_fea, q_label)
            cell_dir = None
            if out_dir is not None:
                cell_dir = out_dir / "cells" / f"qfea{q_fea:g}_qlab{q_label:g}"
                cell_dir.mkdir(parents=True, exist_ok=True)
            for repeat in range(config.n_repeats):
                try:
                    artifacts = repeat_fn(dataset, q_fea, q_label, repeat,
                                          config, cell_dir)
                    cell.reports.append(artifacts.report)
                except Exception as exc:  # cell failures must not kill the grid
                    cell.failures.append(f"repeat {repeat}: {exc}")
            if cell_dir is not None:
                _write_cell_csv(cell_dir / "metrics.csv", cell)
            results.append(cell)
    return results


def run_transductive(config: ExperimentConfig,
                     dataset: Optional[IncompleteDataset] = None
                     ) -> list[CellResult]:
    """Mask, train, impute, and score the whole dataset per grid cell."""
    return _run_grid(config, dataset, _run_repeat_transductive)


def run_inductive(config: ExperimentConfig,
                  dataset: Optional[IncompleteDataset] = None
                  ) -> list[CellResult]:
    """Split, train on the masked train part, score hidden test labels."""
    return _run_grid(config, dataset, _run_repeat_inductive)


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.10g}"


def _write_cell_csv(path: Path, cell: CellResult):
    lines = ["repeat," + ",".join(METRIC_NAMES)]
    for i, report in enumerate(cell.reports):
        lines.append(f"{i}," + ",".join(
            _fmt(getattr(report, name)) for name in METRIC_NAMES))
    for failure in cell.failures:
        lines.append(f"# failed: {failure}")
    path.write_text("\n".join(lines) + "\n")


def emit_report(results: list[CellResult], out_dir, mode: str) -> Path:
    """Aggregate table as CSV and markdown; returns the CSV path."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from exc

    rows = ["mode,q_fea,q_label,metric,n,mean,stddev"]
    for cell in sorted(results, key=lambda c: (c.q_fea, c.q_label)):
        agg = cell.aggregated()
        if agg is None:
            rows.append(f"{mode},{cell.q_fea:.10g},{cell.q_label:.10g},"
                        f"(all repeats failed),0,,")
            continue
        for metric in METRIC_NAMES:
            if metric not in agg.stats:
                continue
            mean, std, n = agg.stats[metric]
            rows.append(f"{mode},{cell.q_fea:.10g},{cell.q_label:.10g},"
                        f"{metric},{n},{_fmt(mean)},{_fmt(std)}")
    csv_path = out_dir / "aggregate.csv"
    csv_path.write_text("\n".join(rows) + "\n")

    md = [f"# {mode} results", ""]
    by_qfea: dict[float, list[CellResult]] = {}
    for cell in results:
        by_qfea.setdefault(cell.q_fea, []).append(cell)
    for q_fea in sorted(by_qfea):
        cells = sorted(by_qfea[q_fea], key=lambda c: c.q_label)
        q_labels = [c.q_label for c in cells]
        md.append(f"## q_fea = {q_fea:g}")
        md.append("")
        md.append("| metric | " + " | ".join(f"q_label={q:g}" for q in q_labels)
                  + " |")
        md.append("|---" * (len(q_labels) + 1) + "|")
        metrics_present = [m for m in METRIC_NAMES
                           if any(c.aggregated() and m in c.aggregated().stats
                                  for c in cells)]
        for metric in metrics_present:
            row = [metric]
            for c in cells:
                agg = c.aggregated()
                if agg is None or metric not in agg.stats:
                    row.append("-")
                else:
                    mean, std, _ = agg.stats[metric]
                    row.append(f"{mean:.3f}" if std is None
                               else f"{mean:.3f} ± {std:.3f}")
            md.append("| " + " | ".join(row) + " |")
        md.append("")
        failures = [f for c in cells for f in c.failures]
        if failures:
            md.append(f"Failures: {len(failures)}")
            md.append("")
    (out_dir / "aggregate.md").write_text("\n".join(md) + "\n")
    return csv_path
