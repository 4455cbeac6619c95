"""Dataset loading: IDX image/label files, CIFAR-10 binary batches, synthetic.

Images come back as float64 in [0, 1] shaped (N, C, H, W); labels as int64.
Nothing here downloads anything; file-backed datasets read from a directory
the caller provides.
"""

from __future__ import annotations

import gzip
import os
import struct
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataSplits(NamedTuple):
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


def _open_maybe_gz(path):
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _find(dirpath, stem):
    for name in (stem, stem + ".gz"):
        p = os.path.join(dirpath, name)
        if os.path.exists(p):
            return p
    raise DataFormatError(f"missing dataset file {stem}[.gz] in {dirpath}")


def load_idx_images(path: str) -> np.ndarray:
    """Big-endian IDX3 image file -> (N, 1, H, W) float64 in [0,1]."""
    with _open_maybe_gz(path) as f:
        header = f.read(16)
        if len(header) != 16:
            raise DataFormatError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"{path}: bad magic 0x{magic:08x} for an image file")
        body = f.read()
    if len(body) != n * rows * cols:
        raise DataFormatError(
            f"{path}: expected {n * rows * cols} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(n, 1, rows, cols)
    return arr.astype(np.float64) / 255.0


def load_idx_labels(path: str) -> np.ndarray:
    """Big-endian IDX1 label file -> (N,) int64."""
    with _open_maybe_gz(path) as f:
        header = f.read(8)
        if len(header) != 8:
            raise DataFormatError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"{path}: bad magic 0x{magic:08x} for a label file")
        body = f.read()
    if len(body) != n:
        raise DataFormatError(f"{path}: expected {n} label bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def _load_idx_pair(dirpath, img_stem, lbl_stem):
    x = load_idx_images(_find(dirpath, img_stem))
    y = load_idx_labels(_find(dirpath, lbl_stem))
    if len(x) != len(y):
        raise DataFormatError(
            f"{img_stem}: {len(x)} images but {len(y)} labels")
    return x, y


def load_mnist_dir(dirpath: str) -> DataSplits:
    """Standard four-file MNIST/Fashion-MNIST layout (optionally gzipped)."""
    xtr, ytr = _load_idx_pair(dirpath, "train-images-idx3-ubyte",
                              "train-labels-idx1-ubyte")
    xte, yte = _load_idx_pair(dirpath, "t10k-images-idx3-ubyte",
                              "t10k-labels-idx1-ubyte")
    return DataSplits(xtr, ytr, xte, yte)


def load_cifar10_batches(paths, classes=None, max_count=None):
    """CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes."""
    xs, ys = [], []
    for path in paths:
        with _open_maybe_gz(path) as f:
            raw = f.read()
        if len(raw) % 3073:
            raise DataFormatError(f"{path}: size {len(raw)} is not a multiple of 3073")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if classes is not None:
        classes = sorted(classes)
        keep = np.isin(y, classes)
        x, y = x[keep], y[keep]
        remap = {c: i for i, c in enumerate(classes)}
        y = np.array([remap[v] for v in y], dtype=np.int64)
    if max_count is not None:
        x, y = x[:max_count], y[:max_count]
    return x, y


def load_cifar10_dir(dirpath: str, classes=None, train_count=None,
                     test_count=None) -> DataSplits:
    train_paths = []
    for i in range(1, 6):
        p = os.path.join(dirpath, f"data_batch_{i}.bin")
        if os.path.exists(p):
            train_paths.append(p)
    if not train_paths:
        raise DataFormatError(f"no data_batch_*.bin files in {dirpath}")
    test_path = os.path.join(dirpath, "test_batch.bin")
    if not os.path.exists(test_path):
        raise DataFormatError(f"missing test_batch.bin in {dirpath}")
    xtr, ytr = load_cifar10_batches(train_paths, classes, train_count)
    xte, yte = load_cifar10_batches([test_path], classes, test_count)
    return DataSplits(xtr, ytr, xte, yte)


# ---------------------------------------------------------------------------
# synthetic data


def make_synthetic(seed: int = 0, n_train: int = 1200, n_test: int = 600,
                   n_classes: int = 10, shape=(1, 28, 28),
                   noise: float = 0.01) -> DataSplits:
    """Seeded stroke-over-dark-background classification set in [0,1].

    Each class is a fixed template of localized gaussian bumps on an
    exactly-zero background; samples scale the template by a random
    brightness and add a fixed-level pixel-noise floor.  Two properties
    are load-bearing.  The mostly-empty background: clean patches there
    carry almost no first-layer response while an L-inf perturbation
    injects energy at every pixel, so the noise floor must stay well below
    typical attack budgets (8/255..32/255) and its level must not vary
    across samples (a varying floor would smear the clean signature of any
    background-sensitive detector).  And strongly class-varying ink mass
    (1..6 bumps): the clean first-layer energy then spreads widely across
    samples, the way handwritten digits do, so an untrained signature is a
    poor detector until training learns features that ignore the ink.
    """
    if n_classes < 2:
        raise ConfigError("need at least two classes")
    c, h, w = shape
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    templates = np.zeros((n_classes,) + tuple(shape))
    for cls in range(n_classes):
        trng = np.random.default_rng(seed * 1000003 + cls)
        for _ in range(int(trng.integers(1, 7))):
            cy = trng.uniform(0.2 * h, 0.8 * h)
            cx = trng.uniform(0.2 * w, 0.8 * w)
            sig = trng.uniform(0.045, 0.09) * (h + w) / 2
            amp = trng.uniform(0.3, 1.0)
            bump = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
            ch = int(trng.integers(0, c))
            templates[cls, ch] += bump
    templates = np.clip(templates, 0.0, 0.95)
    templates[templates < 0.05] = 0.0   # true-zero background

    def draw(n):
        y = rng.integers(0, n_classes, size=n)
        bright = rng.uniform(0.65, 1.15, size=(n, 1, 1, 1))
        x = templates[y] * bright + noise * rng.standard_normal((n,) + tuple(shape))
        return np.clip(x, 0.0, 1.0), y.astype(np.int64)

    xtr, ytr = draw(n_train)
    xte, yte = draw(n_test)
    return DataSplits(xtr, ytr, xte, yte)


def load_dataset(name: str, data_dir: str | None = None, seed: int = 0,
                 **opts) -> DataSplits:
    """Dispatch over the supported dataset names."""
    if name in ("mnist", "fashion_mnist"):
        if not data_dir:
            raise ConfigError(f"{name} needs a data_dir with IDX files")
        return load_mnist_dir(data_dir)
    if name == "cifar10_subset":
        if not data_dir:
            raise ConfigError("cifar10_subset needs a data_dir with .bin batches")
        return load_cifar10_dir(data_dir, classes=opts.get("classes"),
                                train_count=opts.get("train_count"),
                                test_count=opts.get("test_count"))
    if name == "synthetic":
        allowed = {"n_train", "n_test", "n_classes", "shape", "noise"}
        bad = set(opts) - allowed
        if bad:
            raise ConfigError(f"unknown synthetic options: {sorted(bad)}")
        if "shape" in opts:
            opts["shape"] = tuple(opts["shape"])
        return make_synthetic(seed=seed, **opts)
    raise ConfigError(f"unknown dataset {name!r}")
