#!/usr/bin/env python3
"""Download the public benchmark datasets and convert them to the formats the
CLI and the acceptance suite consume.

Needs network access (OpenML). Usage:

    python3 scripts/fetch_datasets.py [--out DATA_DIR]

Writes into DATA_DIR (default: ./data):
    scene.csv, scene.schema            2407 x (294 features + 6 labels)
    pendigits.csv, pendigits.schema    10992 x (16 features + 1 class column)
    mnist-images.idx, mnist-labels.idx 70000 x 784 pixels / digit labels
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
from maskedrbm.data import write_idx_images, write_idx_labels  # noqa: E402


def _to_binary(column) -> np.ndarray:
    mapping = {"0": 0.0, "1": 1.0, "false": 0.0, "true": 1.0}
    out = np.array([mapping[str(v).strip().lower()] for v in column])
    return out


def fetch_scene(out: Path):
    from sklearn.datasets import fetch_openml
    bunch = fetch_openml(data_id=312, as_frame=True, parser="auto")
    features = bunch.data.to_numpy(dtype=float)
    labels = np.column_stack([_to_binary(bunch.target[c])
                              for c in bunch.target.columns])
    n, n_f = features.shape
    header = [f"f{i}" for i in range(n_f)] + \
        [f"l{i}" for i in range(labels.shape[1])]
    rows = np.hstack([features, labels])
    _write_csv(out / "scene.csv", header, rows)
    (out / "scene.schema").write_text(
        "\n".join([f"f{i} = feature" for i in range(n_f)]
                  + [f"l{i} = label" for i in range(labels.shape[1])]) + "\n")
    print(f"scene: {n} x {n_f} features, {labels.shape[1]} labels")


def fetch_pendigits(out: Path):
    from sklearn.datasets import fetch_openml
    bunch = fetch_openml(data_id=32, as_frame=True, parser="auto")
    features = bunch.data.to_numpy(dtype=float)
    classes = np.array([float(v) for v in bunch.target])
    n, n_f = features.shape
    header = [f"f{i}" for i in range(n_f)] + ["digit"]
    rows = np.hstack([features, classes[:, None]])
    _write_csv(out / "pendigits.csv", header, rows)
    (out / "pendigits.schema").write_text(
        "\n".join([f"f{i} = feature" for i in range(n_f)]
                  + ["digit = class"]) + "\n")
    print(f"pendigits: {n} x {n_f} features, "
          f"{len(np.unique(classes))} classes")


def fetch_mnist(out: Path):
    from sklearn.datasets import fetch_openml
    bunch = fetch_openml(data_id=554, as_frame=False, parser="auto")
    pixels = np.asarray(bunch.data, dtype=np.uint8).reshape(-1, 28, 28)
    digits = np.array([int(float(v)) for v in bunch.target], dtype=np.uint8)
    write_idx_images(out / "mnist-images.idx", pixels)
    write_idx_labels(out / "mnist-labels.idx", digits)
    print(f"mnist: {len(digits)} images")


def _write_csv(path: Path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(f"{x:.10g}" for x in row) + "\n")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data")
    parser.add_argument("--skip", nargs="*", default=[],
                        choices=["scene", "pendigits", "mnist"])
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "scene" not in args.skip:
        fetch_scene(out)
    if "pendigits" not in args.skip:
        fetch_pendigits(out)
    if "mnist" not in args.skip:
        fetch_mnist(out)


if __name__ == "__main__":
    main()
