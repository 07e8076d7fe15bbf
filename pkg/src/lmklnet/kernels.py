"""Gaussian RBF kernel stacks over a bandwidth grid tied to the data diameter.

A stack holds ``M`` kernel matrices in a ``(rows, n_train, M)`` array so that
``values[i]`` is the ``(N, M)`` slice fed to the network for sample ``i``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist, pdist, squareform

from .dataio import Dataset, KernelFileHeader, LabeledExample, read_kernel_file, write_kernel_file
from .errors import FormatError, MemoryGuardError

__all__ = [
    "GRID_RATIOS",
    "KernelStack",
    "CrossKernelStack",
    "max_pairwise_distance",
    "bandwidth_grid",
    "rbf_entry",
    "build_train_kernels",
    "build_cross_kernels",
    "save_kernel_stack",
    "load_train_kernels",
    "load_cross_kernels",
]

GRID_RATIOS = np.round(np.arange(1, 11) * 0.1, 1)

DEFAULT_MEMORY_LIMIT = 8 * 1024**3

# densify sparse inputs below this many bytes; above it use the Gram identity
_DENSE_LIMIT = 512 * 1024**2


@dataclass
class KernelStack:
    """Train-by-train kernels, ``values`` of shape (n, n, m)."""

    values: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.bandwidths = np.asarray(self.bandwidths, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != self.values.shape[1]:
            raise FormatError(f"train stack must be (n, n, m), got {self.values.shape}")
        if self.values.shape[2] != self.bandwidths.size:
            raise FormatError("one bandwidth per kernel required")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[2]

    def slice(self, i):
        return self.values[i]

    def check(self, atol=1e-12):
        """Raise if symmetry, unit diagonal or the [0, 1] range is violated."""
        v = self.values
        asym = np.max(np.abs(v - v.transpose(1, 0, 2)))
        if asym > atol:
            raise FormatError(f"kernel stack not symmetric (max |K - K^T| = {asym:g})")
        diag = v[np.arange(self.n), np.arange(self.n), :]
        if not np.all(diag == 1.0):
            raise FormatError("kernel stack diagonal is not exactly 1")
        if np.any(v < 0) or np.any(v > 1):
            raise FormatError("kernel entries outside [0, 1]")


@dataclass
class CrossKernelStack:
    """Test-by-train kernels, ``values`` of shape (t, n, m)."""

    values: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.bandwidths = np.asarray(self.bandwidths, dtype=np.float64)
        if self.values.ndim != 3:
            raise FormatError(f"cross stack must be (t, n, m), got {self.values.shape}")
        if self.values.shape[2] != self.bandwidths.size:
            raise FormatError("one bandwidth per kernel required")

    @property
    def t(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def m(self):
        return self.values.shape[2]

    def slice(self, i):
        return self.values[i]


def _as_matrix(features):
    if isinstance(features, Dataset):
        features = features.to_csr()
    elif isinstance(features, (list, tuple)) and features and isinstance(features[0], LabeledExample):
        d = max((int(ex.indices[-1]) + 1 for ex in features if ex.indices.size), default=1)
        rows = [np.full(ex.indices.size, r) for r, ex in enumerate(features)]
        features = sp.csr_matrix(
            (
                np.concatenate([ex.values for ex in features]),
                (np.concatenate(rows).astype(np.int64), np.concatenate([ex.indices for ex in features])),
            ),
            shape=(len(features), d),
        )
    if sp.issparse(features):
        features = sp.csr_matrix(features, dtype=np.float64)
        if features.shape[0] * features.shape[1] * 8 <= _DENSE_LIMIT:
            return features.toarray()
        return features
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _align(a, b):
    """Pad the narrower feature matrix with zero columns."""
    da, db = a.shape[1], b.shape[1]
    if da == db:
        return a, b
    d = max(da, db)

    def pad(x):
        if x.shape[1] == d:
            return x
        if sp.issparse(x):
            return sp.csr_matrix((x.data, x.indices, x.indptr), shape=(x.shape[0], d))
        return np.pad(x, ((0, 0), (0, d - x.shape[1])))

    return pad(a), pad(b)


def _sq_dists(a, b=None):
    """Squared Euclidean distances; exact differences for dense input."""
    if b is None:
        if sp.issparse(a):
            return _gram_sq_dists(a, a, symmetric=True)
        return squareform(pdist(a, "sqeuclidean"))
    if sp.issparse(a) or sp.issparse(b):
        return _gram_sq_dists(sp.csr_matrix(a), sp.csr_matrix(b))
    return cdist(a, b, "sqeuclidean")


def _gram_sq_dists(a, b, symmetric=False):
    na = np.asarray(a.multiply(a).sum(axis=1)).ravel()
    nb = np.asarray(b.multiply(b).sum(axis=1)).ravel()
    d2 = na[:, None] + nb[None, :] - 2.0 * (a @ b.T).toarray()
    np.maximum(d2, 0.0, out=d2)
    if symmetric:
        d2 = np.triu(d2, 1)
        d2 = d2 + d2.T
    return d2


def max_pairwise_distance(features):
    """Largest Euclidean distance over all pairs, computed exactly."""
    x = _as_matrix(features)
    if x.shape[0] < 2:
        raise ValueError("max_pairwise_distance needs at least two examples")
    if sp.issparse(x):
        return float(np.sqrt(_gram_sq_dists(x, x, symmetric=True).max()))
    return float(pdist(x, "euclidean").max())


def bandwidth_grid(d_max, ratios=GRID_RATIOS):
    """Bandwidths ``ratio * d_max`` for ratio = 0.1, 0.2, ..., 1.0."""
    if not d_max > 0:
        raise ValueError(f"d_max must be positive, got {d_max} (all points identical?)")
    return [float(r) * float(d_max) for r in ratios]


def _sparse_pair(v):
    if isinstance(v, LabeledExample):
        return v.indices, v.values
    if isinstance(v, tuple) and len(v) == 2:
        return np.asarray(v[0], dtype=np.int64), np.asarray(v[1], dtype=np.float64)
    if isinstance(v, (list,)) and (not v or isinstance(v[0], tuple)):
        if not v:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        idx, val = zip(*v)
        return np.asarray(idx, dtype=np.int64), np.asarray(val, dtype=np.float64)
    dense = np.asarray(v, dtype=np.float64).ravel()
    nz = np.flatnonzero(dense)
    return nz, dense[nz]


def rbf_entry(x, y, sigma):
    """``exp(-||x - y||^2 / (2 sigma^2))`` for sparse or dense vectors."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xi, xv = _sparse_pair(x)
    yi, yv = _sparse_pair(y)
    union = np.union1d(xi, yi)
    dx = np.zeros(union.size)
    dx[np.searchsorted(union, xi)] += xv
    dx[np.searchsorted(union, yi)] -= yv
    return float(np.exp(-np.dot(dx, dx) / (2.0 * sigma * sigma)))


def _guard(rows, cols, m, itemsize, limit):
    need = rows * cols * m * itemsize
    if limit is not None and need > limit:
        raise MemoryGuardError(
            f"kernel stack {rows}x{cols}x{m} needs {need / 1024**3:.2f} GiB, "
            f"over the {limit / 1024**3:.2f} GiB limit; subsample or raise memory_limit"
        )


def _stack(d2, grid):
    out = np.empty(d2.shape + (len(grid),))
    for k, sigma in enumerate(grid):
        np.exp(d2 * (-0.5 / (sigma * sigma)), out=out[:, :, k])
    return out


def build_train_kernels(features, grid, memory_limit=DEFAULT_MEMORY_LIMIT):
    """Kernel matrices of the training set against itself, one per bandwidth.

    Only the upper triangle of distances is computed; the lower is mirrored.
    """
    grid = [float(s) for s in grid]
    if not grid:
        raise ValueError("bandwidth grid is empty")
    if any(s <= 0 for s in grid):
        raise ValueError("bandwidths must be positive")
    x = _as_matrix(features)
    n = x.shape[0]
    _guard(n, n, len(grid), 8, memory_limit)
    d2 = _sq_dists(x)
    np.fill_diagonal(d2, 0.0)
    stack = KernelStack(_stack(d2, grid), np.array(grid))
    stack.check()
    return stack


def build_cross_kernels(test_features, train_features, grid, memory_limit=DEFAULT_MEMORY_LIMIT):
    grid = [float(s) for s in grid]
    if not grid:
        raise ValueError("bandwidth grid is empty")
    a, b = _align(_as_matrix(test_features), _as_matrix(train_features))
    _guard(a.shape[0], b.shape[0], len(grid), 8, memory_limit)
    return CrossKernelStack(_stack(_sq_dists(a, b), grid), np.array(grid))


def save_kernel_stack(stack, path, dtype="f64"):
    rows, cols, m = stack.values.shape
    header = KernelFileHeader(rows, cols, m, dtype, tuple(float(s) for s in stack.bandwidths))
    write_kernel_file(header, np.ascontiguousarray(stack.values.transpose(2, 0, 1)), path)
    return header


def _load(path):
    header, values = read_kernel_file(path)
    arr = np.ascontiguousarray(values.transpose(1, 2, 0), dtype=np.float64)
    return header, arr


def load_train_kernels(path):
    header, arr = _load(path)
    if header.n_rows != header.n_cols:
        raise FormatError(f"{path}: train stack must be square, got {header.n_rows}x{header.n_cols}")
    return KernelStack(arr, np.array(header.bandwidths))


def load_cross_kernels(path):
    header, arr = _load(path)
    return CrossKernelStack(arr, np.array(header.bandwidths))
