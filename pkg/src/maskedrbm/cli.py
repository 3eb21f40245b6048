"""Command-line interface.

Subcommands: ``transductive`` and ``inductive`` run the full masked grid
protocol; ``train`` fits a single model; ``eval`` scores a saved model against
a replayed mask; ``impute`` writes per-instance imputations. Exit codes:
0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (DataFormatError, MaskSpec, apply_mask, load_mask, save_mask)
from .experiment import (ConfigError, ExperimentConfig, _label_metrics,
                         _make_stopper, build_config, emit_report,
                         fit_threshold, load_dataset, parse_config_file,
                         run_inductive, run_transductive)
from .meanfield import decode_multiclass, decode_multilabel, impute
from .metrics import rmse
from .model import load_model, save_model
from .seeding import derive_seed
from .training import DivergenceError, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); 2 means data error here
        raise ConfigError(message)


def _add_common(p: _Parser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dataset", help="csv file, or IDX image file")
    p.add_argument("--schema", help="column-role schema for csv datasets")
    p.add_argument("--dataset-labels", dest="dataset_labels",
                   help="IDX label file")
    p.add_argument("--q-fea", dest="q_fea", help="feature masking rate(s)")
    p.add_argument("--q-label", dest="q_label", help="label masking rate(s)")
    p.add_argument("--repeats", dest="n_repeats", type=int)
    p.add_argument("--seed", dest="base_seed", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--mode", dest="negative_phase", choices=["cd", "pcd"])
    p.add_argument("--epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", dest="patience_epochs", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--hidden", dest="n_hidden", type=int)
    p.add_argument("--limit", dest="limit", type=int)


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskedrbm")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("transductive", "inductive", "train"):
        _add_common(sub.add_parser(name))
    for name in ("eval", "impute"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--model", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--schema")
        p.add_argument("--dataset-labels", dest="dataset_labels")
        p.add_argument("--mask", help="mask csv to replay")
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--seed", dest="base_seed", type=int, default=0)
        p.add_argument("--restarts", type=int)
        p.add_argument("--iterations", type=int)
    return parser


def _experiment_config(args) -> ExperimentConfig:
    options: dict = {}
    if getattr(args, "config", None):
        options.update(parse_config_file(args.config))
    for key in ("dataset", "schema", "dataset_labels", "q_fea", "q_label",
                "n_repeats", "base_seed", "out_dir", "negative_phase",
                "max_epochs", "patience_epochs", "eval_every", "n_hidden",
                "limit"):
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    command = getattr(args, "command", "transductive")
    options.setdefault("mode",
                       command if command in ("transductive", "inductive")
                       else "transductive")
    if "dataset" not in options:
        raise ConfigError("a dataset path is required")
    return build_config(options)


def _cmd_grid(args) -> int:
    config = _experiment_config(args)
    config = replace(config, mode=args.command)
    if config.out_dir is None:
        raise ConfigError("--out is required for grid runs")
    runner = run_transductive if args.command == "transductive" else run_inductive
    results = runner(config)
    path = emit_report(results, config.out_dir, config.mode)
    print(f"aggregate written to {path}")
    return 0


def _cmd_train(args) -> int:
    config = _experiment_config(args)
    if config.out_dir is None:
        raise ConfigError("--out is required for train")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    seed = derive_seed(config.base_seed, config.q_fea[0], config.q_label[0], 0)
    masked = apply_mask(dataset, MaskSpec(config.q_fea[0], config.q_label[0],
                                          seed))
    view = masked.masked_view()
    stopper = _make_stopper(dataset, view, config.imputation, seed)
    log_path = out / "training_log.csv"
    log_path.unlink(missing_ok=True)
    result = train(view, replace(config.train, seed=derive_seed(seed, "train")),
                   stopper, log_path)
    save_model(out / "model.npz", result.model)
    save_mask(out / "mask.csv", masked)
    print(f"model written to {out / 'model.npz'} "
          f"(best epoch {result.best_epoch} of {result.n_epochs_run})")
    return 0


def _load_for_eval(args):
    config = _experiment_config(args)
    model = load_model(args.model)
    dataset = load_dataset(config)
    if args.mask:
        dataset = dataset.with_mask(load_mask(args.mask, dataset.values.shape))
    imputation = config.imputation
    if args.restarts:
        imputation = replace(imputation, n_restarts=args.restarts)
    if args.iterations:
        imputation = replace(imputation, n_iterations=args.iterations)
    return config, model, dataset, imputation


def _cmd_eval(args) -> int:
    config, model, dataset, imputation = _load_for_eval(args)
    view = dataset.masked_view()
    rng = np.random.default_rng(derive_seed(config.base_seed, "impute"))
    result = impute(model, view.values, view.observed, imputation, rng)
    threshold = None
    if not dataset.layout.is_multiclass and dataset.layout.n_labels:
        threshold = fit_threshold(model, view, imputation, config.base_seed)
    scored = _label_metrics(dataset.values, dataset.observed, dataset.layout,
                            result.label_probs, threshold)
    fmask = np.zeros_like(dataset.observed)
    cols = dataset.layout.feature_indices
    fmask[:, cols] = ~dataset.observed[:, cols]
    if fmask.any():
        stats = dataset.feature_stats
        scored["rmse"] = rmse(stats.destandardize(dataset.values),
                              stats.destandardize(result.expectations), fmask)
    for name in sorted(scored):
        print(f"{name},{scored[name]:.10g}")
    return 0


def _cmd_impute(args) -> int:
    config, model, dataset, imputation = _load_for_eval(args)
    view = dataset.masked_view()
    rng = np.random.default_rng(derive_seed(config.base_seed, "impute"))
    result = impute(model, view.values, view.observed, imputation, rng)
    layout = dataset.layout
    if layout.is_multiclass:
        decoded = np.zeros_like(result.label_probs, dtype=np.int64)
        label_pos = {int(i): k for k, i in enumerate(layout.label_indices)}
        for group in layout.class_groups:
            cols = [label_pos[int(i)] for i in group]
            decoded[:, cols] = decode_multiclass(result.label_probs[:, cols])
    elif layout.n_labels:
        threshold = fit_threshold(model, view, imputation, config.base_seed)
        decoded = decode_multilabel(result.label_probs, threshold)
    else:
        decoded = np.zeros((dataset.n_instances, 0), dtype=np.int64)

    out_path = Path(config.out_dir) if config.out_dir else Path("imputations.csv")
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["instance", "imputed_features", "label_probs",
                         "decoded_labels"])
        for i in range(dataset.n_instances):
            missing = np.flatnonzero(~dataset.observed[i, layout.feature_indices])
            cols = layout.feature_indices[missing]
            feats = ";".join(
                f"{int(c)}={result.expectations[i, c]:.10g}" for c in cols)
            probs = ";".join(f"{p:.10g}" for p in result.label_probs[i])
            bits = ";".join(str(int(b)) for b in decoded[i])
            writer.writerow([i, feats, probs, bits])
    print(f"imputations written to {out_path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("transductive", "inductive"):
            return _cmd_grid(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        return _cmd_impute(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
