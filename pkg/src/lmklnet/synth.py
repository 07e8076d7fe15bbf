"""Small 2-D benchmark problems, written out in LIBSVM format."""

import numpy as np

from .dataio import Dataset, LabeledExample, write_dataset

__all__ = ["KINDS", "gauss2", "xor4", "rings", "generate", "to_dataset", "write_split"]

KINDS = ("gauss2", "xor4", "rings")


def _balanced_labels(n, k, rng):
    """Cluster ids 0..k-1 with counts differing by at most one, in random order."""
    return rng.permutation(np.arange(n) % k)


def gauss2(n, rng, separation=4.0, std=1.0):
    """Two isotropic Gaussians centred at (+-separation/2, 0); labels -1/+1."""
    c = _balanced_labels(n, 2, rng)
    X = rng.normal(0.0, std, (n, 2))
    X[:, 0] += np.where(c == 0, -separation / 2, separation / 2)
    return X, np.where(c == 0, -1, 1)


def xor4(n, rng, offset=1.0, std=0.3):
    """Four blobs on the corners of a square; opposite corners share a label."""
    c = _balanced_labels(n, 4, rng)
    sx = np.array([-1, 1, 1, -1])[c]
    sy = np.array([-1, 1, -1, 1])[c]
    X = rng.normal(0.0, std, (n, 2)) + offset * np.stack([sx, sy], axis=1)
    return X, np.where(c < 2, -1, 1)


def rings(n, rng, radii=(1.0, 2.0), noise=0.15):
    """Two concentric noisy circles; labels -1 (inner) / +1 (outer)."""
    c = _balanced_labels(n, 2, rng)
    r = np.asarray(radii)[c] + rng.normal(0.0, noise, n)
    theta = rng.uniform(0.0, 2 * np.pi, n)
    X = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return X, np.where(c == 0, -1, 1)


_GENERATORS = {"gauss2": gauss2, "xor4": xor4, "rings": rings}


def generate(kind, n_train, n_test, seed):
    """Return ``(X_train, y_train, X_test, y_test)`` with raw labels -1/+1."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    if n_train < 2 or n_test < 1:
        raise ValueError(f"need n_train >= 2 and n_test >= 1, got {n_train}, {n_test}")
    rng = np.random.default_rng(seed)
    Xtr, ytr = _GENERATORS[kind](n_train, rng)
    Xte, yte = _GENERATORS[kind](n_test, rng)
    return Xtr, ytr, Xte, yte


def to_dataset(X, y, label_map=None):
    if label_map is None:
        label_map = {raw: i for i, raw in enumerate(sorted(set(int(v) for v in y)))}
    examples = []
    for row, label in zip(X, y):
        nz = np.flatnonzero(row)
        examples.append(LabeledExample(label_map[int(label)], nz, row[nz]))
    return Dataset(examples, X.shape[1], label_map)


def write_split(kind, n_train, n_test, seed, train_path, test_path):
    Xtr, ytr, Xte, yte = generate(kind, n_train, n_test, seed)
    train = to_dataset(Xtr, ytr)
    write_dataset(train, train_path)
    write_dataset(to_dataset(Xte, yte, train.label_map), test_path)
    return train_path, test_path
