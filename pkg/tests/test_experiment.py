import subprocess
import sys

import numpy as np
import pytest

from maskedrbm.data import MaskSpec, apply_mask, dataset_from_arrays
from maskedrbm.experiment import (ConfigError, ExperimentConfig, build_config,
                                  emit_report, fit_threshold, load_dataset,
                                  parse_config_file, run_inductive,
                                  run_transductive)
from maskedrbm.meanfield import ImputationConfig, impute
from maskedrbm.metrics import MetricsReport
from maskedrbm.model import UnitKind
from maskedrbm.training import TrainConfig, train


def synthetic_multilabel(n=120, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, n)
    feats = rng.normal(0, 0.6, (n, 6)) + z[:, None] * np.array(
        [1.5, -1.5, 1.5, -1.5, 1.5, -1.5])
    labels = np.stack([z, 1 - z], axis=1).astype(float)
    return dataset_from_arrays(feats, labels, feature_kind=UnitKind.GAUSSIAN)


def synthetic_multiclass(n=120, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 3, n)
    centers = np.array([[2.0, 0.0, -2.0, 0.0],
                        [-2.0, 2.0, 0.0, 0.0],
                        [0.0, -2.0, 2.0, 2.0]])
    feats = rng.normal(0, 0.6, (n, 4)) + centers[z]
    labels = np.zeros((n, 3))
    labels[np.arange(n), z] = 1.0
    return dataset_from_arrays(feats, labels, feature_kind=UnitKind.GAUSSIAN,
                               multiclass=True)


def fast_config(**over):
    base = dict(dataset="unused", q_fea=(0.4,), q_label=(0.4,), n_repeats=2,
                base_seed=7,
                train=TrainConfig(n_hidden=8, max_epochs=60, eval_every=20,
                                  patience_epochs=60, minibatch_size=10),
                imputation=ImputationConfig(n_restarts=4, n_iterations=10))
    base.update(over)
    return ExperimentConfig(**base)


# --- transductive -------------------------------------------------------------

def test_transductive_multilabel_end_to_end(tmp_path):
    config = fast_config(out_dir=str(tmp_path / "out"))
    results = run_transductive(config, synthetic_multilabel())
    assert len(results) == 1
    cell = results[0]
    assert not cell.failures
    assert len(cell.reports) == 2
    for report in cell.reports:
        assert report.rmse is not None and report.rmse > 0
        assert 0.0 <= report.micro_auc <= 1.0
        assert 0.0 <= report.hamming_accuracy <= 1.0
        assert report.accuracy is None  # multi-class metric absent
    out = tmp_path / "out" / "cells" / "qfea0.4_qlab0.4"
    assert (out / "metrics.csv").exists()
    assert (out / "model_0.npz").exists()
    assert (out / "mask_1.csv").exists()
    assert (out / "training_log_0.csv").exists()


def test_transductive_multiclass_end_to_end():
    config = fast_config()
    results = run_transductive(config, synthetic_multiclass())
    cell = results[0]
    assert not cell.failures
    for report in cell.reports:
        assert report.averaged_auc is not None
        assert report.accuracy is not None
        assert report.micro_auc is None


def test_transductive_degenerate_empty_mask():
    # q = 0 leaves nothing to score: no failures, reports carry no metrics
    config = fast_config(q_fea=(0.0,), q_label=(0.0,), n_repeats=1,
                         train=TrainConfig(n_hidden=4, max_epochs=5,
                                           minibatch_size=10))
    results = run_transductive(config, synthetic_multilabel(40))
    cell = results[0]
    assert not cell.failures
    assert cell.reports[0].as_dict() == {}


def test_transductive_learns_structure():
    # sanity: the pipeline recovers strong synthetic structure
    config = fast_config(n_repeats=1,
                         train=TrainConfig(n_hidden=12, max_epochs=400,
                                           eval_every=25, patience_epochs=150,
                                           minibatch_size=10))
    results = run_transductive(config, synthetic_multilabel(200))
    report = results[0].reports[0]
    assert report.micro_auc > 0.8


def test_transductive_multiclass_on_real_digits():
    # end-to-end on real image data: binarized 8x8 digits, half the pixels
    # and 30% of the class labels hidden
    from sklearn.datasets import load_digits
    digits = load_digits()
    feats = (digits.images.reshape(len(digits.target), 64) >= 8).astype(float)
    labels = np.zeros((len(digits.target), 10))
    labels[np.arange(len(digits.target)), digits.target] = 1.0
    ds = dataset_from_arrays(feats, labels, multiclass=True)
    config = fast_config(
        q_fea=(0.5,), q_label=(0.3,), n_repeats=1, base_seed=1,
        train=TrainConfig(n_hidden=100, max_epochs=400, eval_every=50,
                          patience_epochs=200, negative_phase="pcd"))
    results = run_transductive(config, ds)
    assert not results[0].failures
    report = results[0].reports[0]
    assert report.averaged_auc > 0.75
    assert report.rmse < 0.45  # beats predicting the pixel mean (~0.48)


# --- inductive ------------------------------------------------------------------

def test_inductive_multiclass_end_to_end(tmp_path):
    config = fast_config(out_dir=str(tmp_path / "out"), mode="inductive")
    results = run_inductive(config, synthetic_multiclass())
    cell = results[0]
    assert not cell.failures
    for report in cell.reports:
        assert report.rmse is None  # label metrics only
        assert report.averaged_auc is not None
        assert report.accuracy is not None
    out = tmp_path / "out" / "cells" / "qfea0.4_qlab0.4"
    assert (out / "mask_train_0.csv").exists()
    assert (out / "mask_test_0.csv").exists()


def test_inductive_multilabel_end_to_end():
    config = fast_config(mode="inductive")
    results = run_inductive(config, synthetic_multilabel())
    cell = results[0]
    assert not cell.failures
    for report in cell.reports:
        assert report.micro_auc is not None
        assert report.hamming_accuracy is not None


def test_cell_failure_contained_and_run_continues():
    # all-ones labels make every masked label pool single-class, so scoring
    # fails in that cell; the healthy cell still completes
    rng = np.random.default_rng(0)
    feats = rng.normal(0, 1, (40, 4))
    bad = dataset_from_arrays(feats, np.ones((40, 2)),
                              feature_kind=UnitKind.GAUSSIAN)
    config = fast_config(q_fea=(0.2,), q_label=(0.5,), n_repeats=2,
                         train=TrainConfig(n_hidden=3, max_epochs=4,
                                           minibatch_size=10))
    cells = run_transductive(config, bad)
    assert len(cells) == 1
    assert len(cells[0].failures) == 2
    assert not cells[0].reports
    # emit_report survives a fully failed cell
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = emit_report(cells, tmp, "transductive")
        assert "(all repeats failed)" in path.read_text()


# --- determinism ------------------------------------------------------------------

def test_transductive_rerun_byte_identical(tmp_path):
    ds = synthetic_multilabel(60)
    config = fast_config(q_label=(0.3, 0.6), n_repeats=2,
                         train=TrainConfig(n_hidden=6, max_epochs=30,
                                           eval_every=10, patience_epochs=30,
                                           minibatch_size=10))
    paths = []
    for name in ("a", "b"):
        out = tmp_path / name
        results = run_transductive(
            ExperimentConfig(**{**config.__dict__, "out_dir": str(out)}),
            ds)
        paths.append(emit_report(results, out, "transductive"))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    md = [(p.parent / "aggregate.md").read_bytes() for p in paths]
    assert md[0] == md[1]


# --- ground-truth isolation (canary) ----------------------------------------------

def test_training_and_imputation_never_read_masked_values():
    ds = synthetic_multilabel(50)
    masked = apply_mask(ds, MaskSpec(0.5, 0.5, seed=3))
    cfg = TrainConfig(n_hidden=5, max_epochs=15, minibatch_size=10, seed=2)
    models = []
    imputations = []
    for fill in (0.0, np.nan):
        view = masked.masked_view(fill)
        result = train(view, cfg)
        models.append(result.model)
        imp = impute(result.model, view.values, view.observed,
                     ImputationConfig(n_restarts=3, n_iterations=5),
                     np.random.default_rng(4))
        imputations.append(imp.expectations)
        t = fit_threshold(result.model, view,
                          ImputationConfig(n_restarts=2, n_iterations=5), 1)
        assert 0.0 < t < 1.0
    assert models[0].weights.tobytes() == models[1].weights.tobytes()
    assert models[0].visible_bias.tobytes() == models[1].visible_bias.tobytes()
    assert imputations[0].tobytes() == imputations[1].tobytes()


# --- stopping metric snapshot --------------------------------------------------

def test_grid_scores_best_snapshot_not_last(tmp_path):
    # run long enough that patience triggers; best epoch must precede the last
    config = fast_config(n_repeats=1, out_dir=str(tmp_path / "o"),
                         train=TrainConfig(n_hidden=8, max_epochs=300,
                                           eval_every=10, patience_epochs=60,
                                           minibatch_size=10))
    results = run_transductive(config, synthetic_multilabel(80))
    assert not results[0].failures
    log = (tmp_path / "o" / "cells" / "qfea0.4_qlab0.4"
           / "training_log_0.csv").read_text().strip().splitlines()
    rows = [line.split(",") for line in log[1:]]
    metrics = [float(r[1]) for r in rows]
    best_epoch = int(rows[int(np.argmax(metrics))][0])
    last_epoch = int(rows[-1][0])
    assert last_epoch >= best_epoch


# --- report emission -----------------------------------------------------------

def test_emit_report_empty_grid(tmp_path):
    path = emit_report([], tmp_path / "empty", "transductive")
    assert path.read_text().startswith("mode,q_fea,q_label,metric")
    assert len(path.read_text().strip().splitlines()) == 1


def test_emit_report_single_cell(tmp_path):
    from maskedrbm.experiment import CellResult
    cell = CellResult(0.5, 0.3, reports=[MetricsReport(rmse=0.25)])
    path = emit_report([cell], tmp_path, "transductive")
    lines = path.read_text().strip().splitlines()
    assert lines[1] == "transductive,0.5,0.3,rmse,1,0.25,"
    md = (tmp_path / "aggregate.md").read_text()
    assert "q_fea = 0.5" in md and "rmse" in md


def test_emit_report_unwritable_directory(tmp_path):
    target = tmp_path / "blocked"
    target.write_text("a file, not a directory")
    with pytest.raises(ConfigError):
        emit_report([], target, "transductive")


# --- config parsing -------------------------------------------------------------

def test_parse_config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("""
# comment
dataset = data.csv
schema = data.schema
q_fea = 0.5,0.8
q_label = 0.3
n_repeats = 3
learning_rate = 0.01
n_restarts = 5
mode = inductive
""")
    config = build_config(parse_config_file(path))
    assert config.dataset == "data.csv"
    assert config.q_fea == (0.5, 0.8)
    assert config.q_label == (0.3,)
    assert config.n_repeats == 3
    assert config.mode == "inductive"
    assert config.train.learning_rate == 0.01
    assert config.imputation.n_restarts == 5


def test_build_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config({"dataset": "x.csv", "schema": "s", "wibble": "1"})


def test_build_config_rejects_bad_value():
    with pytest.raises(ConfigError):
        build_config({"dataset": "x.csv", "n_repeats": "many"})
    with pytest.raises(ConfigError):
        build_config({"dataset": "x.csv", "mode": "sideways"})


def test_config_file_cli_override_precedence(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("dataset = a.csv\nschema = s\nn_repeats = 9\n")
    options = parse_config_file(conf)
    options["n_repeats"] = "2"  # CLI override
    assert build_config(options).n_repeats == 2


def test_load_dataset_limit(tmp_path):
    ds = synthetic_multilabel(50)
    csv_lines = ["f0,f1,f2,f3,f4,f5,l0,l1"]
    raw = ds.feature_stats.destandardize(ds.values)
    for row in raw:
        csv_lines.append(",".join(f"{x:.6f}" for x in row))
    (tmp_path / "d.csv").write_text("\n".join(csv_lines) + "\n")
    (tmp_path / "d.schema").write_text(
        "\n".join([f"f{i} = feature" for i in range(6)]
                  + ["l0 = label", "l1 = label"]))
    config = ExperimentConfig(dataset=str(tmp_path / "d.csv"),
                              schema=str(tmp_path / "d.schema"), limit=20)
    loaded = load_dataset(config)
    assert loaded.n_instances == 20
    again = load_dataset(config)
    assert np.array_equal(loaded.values, again.values)


# --- CLI -------------------------------------------------------------------------

def _run_cli(*args):
    return subprocess.run([sys.executable, "-m", "maskedrbm.cli", *args],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def tiny_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_data")
    ds = synthetic_multilabel(40, seed=5)
    raw = ds.feature_stats.destandardize(ds.values)
    lines = ["f0,f1,f2,f3,f4,f5,l0,l1"]
    for row in raw:
        lines.append(",".join(f"{x:.6f}" for x in row))
    (tmp / "d.csv").write_text("\n".join(lines) + "\n")
    (tmp / "d.schema").write_text(
        "\n".join([f"f{i} = feature" for i in range(6)]
                  + ["l0 = label", "l1 = label"]))
    return tmp


def test_cli_transductive_and_artifacts(tiny_csv, tmp_path):
    out = tmp_path / "run"
    proc = _run_cli("transductive", "--dataset", str(tiny_csv / "d.csv"),
                    "--schema", str(tiny_csv / "d.schema"),
                    "--q-fea", "0.4", "--q-label", "0.4", "--repeats", "1",
                    "--seed", "3", "--epochs", "10", "--eval-every", "5",
                    "--patience", "10", "--hidden", "4", "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert (out / "aggregate.csv").exists()
    assert (out / "aggregate.md").exists()


def test_cli_train_eval_impute(tiny_csv, tmp_path):
    out = tmp_path / "trained"
    proc = _run_cli("train", "--dataset", str(tiny_csv / "d.csv"),
                    "--schema", str(tiny_csv / "d.schema"),
                    "--q-fea", "0.4", "--q-label", "0.4", "--seed", "3",
                    "--epochs", "10", "--eval-every", "5", "--hidden", "4",
                    "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert (out / "model.npz").exists()
    assert (out / "mask.csv").exists()

    proc = _run_cli("eval", "--model", str(out / "model.npz"),
                    "--dataset", str(tiny_csv / "d.csv"),
                    "--schema", str(tiny_csv / "d.schema"),
                    "--mask", str(out / "mask.csv"),
                    "--restarts", "2", "--iterations", "5")
    assert proc.returncode == 0, proc.stderr
    assert "micro_auc," in proc.stdout
    assert "rmse," in proc.stdout

    imp_out = tmp_path / "imp.csv"
    proc = _run_cli("impute", "--model", str(out / "model.npz"),
                    "--dataset", str(tiny_csv / "d.csv"),
                    "--schema", str(tiny_csv / "d.schema"),
                    "--mask", str(out / "mask.csv"),
                    "--restarts", "2", "--iterations", "5",
                    "--out", str(imp_out))
    assert proc.returncode == 0, proc.stderr
    header = imp_out.read_text().splitlines()[0]
    assert header == "instance,imputed_features,label_probs,decoded_labels"
    assert len(imp_out.read_text().strip().splitlines()) == 41


def test_cli_exit_codes(tiny_csv, tmp_path):
    # config error: no dataset
    proc = _run_cli("transductive", "--out", str(tmp_path / "x"))
    assert proc.returncode == 1
    # data error: missing file
    proc = _run_cli("transductive", "--dataset", "/nonexistent.csv",
                    "--schema", str(tiny_csv / "d.schema"),
                    "--out", str(tmp_path / "y"))
    assert proc.returncode == 2
    # config error: bad flag value
    proc = _run_cli("transductive", "--dataset", str(tiny_csv / "d.csv"),
                    "--schema", str(tiny_csv / "d.schema"),
                    "--mode", "warp", "--out", str(tmp_path / "z"))
    assert proc.returncode == 1
