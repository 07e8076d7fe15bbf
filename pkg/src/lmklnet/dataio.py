"""LIBSVM parsing, dataset subsampling and the binary kernel tensor format.

Feature indices are 1-based on disk and 0-based in memory.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, ParseError, SizeError

__all__ = [
    "LabeledExample",
    "Dataset",
    "KernelFileHeader",
    "parse_libsvm_line",
    "format_libsvm_line",
    "load_dataset",
    "write_dataset",
    "remap_labels",
    "subsample",
    "write_kernel_file",
    "read_kernel_file",
    "read_kernel_header",
    "read_labels",
    "write_labels",
]


@dataclass(frozen=True)
class LabeledExample:
    """One sparse example: an integer label and sorted (index, value) pairs."""

    label: int
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise FormatError("indices and values must be 1-D arrays of equal length")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise FormatError("feature indices must be non-negative and strictly increasing")
        if not np.all(np.isfinite(val)):
            raise FormatError("feature values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def features(self):
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def with_label(self, label):
        return LabeledExample(int(label), self.indices, self.values)

    def __eq__(self, other):
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass
class Dataset:
    """Examples with labels already remapped to ``0..num_classes-1``.

    ``label_map`` maps raw file labels to class ids.
    """

    examples: list
    num_features: int
    label_map: dict

    def __post_init__(self):
        if not self.examples:
            raise FormatError("empty dataset")
        if len(self.label_map) < 2:
            raise FormatError("a dataset needs at least two classes")
        c = len(self.label_map)
        for ex in self.examples:
            if not 0 <= ex.label < c:
                raise FormatError(f"label {ex.label} outside [0, {c})")

    def __len__(self):
        return len(self.examples)

    @property
    def num_classes(self):
        return len(self.label_map)

    @property
    def inverse_label_map(self):
        return {v: k for k, v in self.label_map.items()}

    @property
    def labels(self):
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def to_csr(self, num_features=None):
        """Stack the examples into a CSR matrix of shape (n, num_features)."""
        d = self.num_features if num_features is None else num_features
        indptr = np.zeros(len(self.examples) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([ex.indices.size for ex in self.examples])
        if indptr[-1]:
            indices = np.concatenate([ex.indices for ex in self.examples])
            data = np.concatenate([ex.values for ex in self.examples])
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        if indices.size and indices.max() >= d:
            raise FormatError(f"feature index {indices.max() + 1} exceeds num_features={d}")
        return sp.csr_matrix((data, indices, indptr), shape=(len(self.examples), d))

    def to_dense(self, num_features=None):
        return self.to_csr(num_features).toarray()


def _parse_label(token, lineno, column):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"malformed label {token!r}", lineno, column) from None
    if not np.isfinite(value) or value != int(value):
        raise ParseError(f"label {token!r} is not an integer", lineno, column)
    return int(value)


def parse_libsvm_line(text, lineno=None):
    """Parse ``<label> <index>:<value> ...`` into a :class:`LabeledExample`.

    Anything after ``#`` is ignored. Raises :class:`ParseError` for bad
    tokens and :class:`FormatError` when indices are not strictly increasing.
    """
    body = text.split("#", 1)[0]
    tokens = []
    pos = 0
    for tok in body.split():
        col = body.index(tok, pos)
        pos = col + len(tok)
        tokens.append((tok, col + 1))
    if not tokens:
        raise ParseError("missing label", lineno, 1)

    label = _parse_label(tokens[0][0], lineno, tokens[0][1])
    indices = []
    values = []
    for tok, col in tokens[1:]:
        key, sep, val = tok.partition(":")
        if not sep:
            raise ParseError(f"expected <index>:<value>, got {tok!r}", lineno, col)
        try:
            idx = int(key)
        except ValueError:
            raise ParseError(f"malformed feature index {key!r}", lineno, col) from None
        if idx < 1:
            raise ParseError(f"feature index must be >= 1, got {idx}", lineno, col)
        try:
            value = float(val)
        except ValueError:
            raise ParseError(f"malformed feature value {val!r}", lineno, col) from None
        if not np.isfinite(value):
            raise ParseError(f"non-finite feature value {val!r}", lineno, col)
        if indices and idx - 1 <= indices[-1]:
            where = f" on line {lineno}" if lineno is not None else ""
            raise FormatError(
                f"feature indices not strictly increasing at column {col}{where}: "
                f"{indices[-1] + 1} then {idx}"
            )
        indices.append(idx - 1)
        values.append(value)
    return LabeledExample(label, np.array(indices, dtype=np.int64), np.array(values))


def format_libsvm_line(example):
    """Canonical text form; inverse of :func:`parse_libsvm_line`."""
    parts = [str(int(example.label))]
    parts.extend(f"{i + 1}:{float(v)!r}" for i, v in zip(example.indices, example.values))
    return " ".join(parts)


def remap_labels(raw_labels):
    """Map raw labels onto ``0..C-1`` in ascending raw order.

    Returns ``(mapping, inverse)``.
    """
    distinct = sorted({int(y) for y in raw_labels})
    if len(distinct) < 2:
        raise FormatError(f"need at least two distinct labels, got {distinct}")
    mapping = {raw: i for i, raw in enumerate(distinct)}
    inverse = {i: raw for raw, i in mapping.items()}
    return mapping, inverse


def _read_examples(path):
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.split("#", 1)[0].strip():
                continue
            examples.append(parse_libsvm_line(line, lineno=lineno))
    return examples


def load_dataset(path, label_map=None, num_features=None):
    """Read a LIBSVM file.

    Labels are remapped with :func:`remap_labels` unless ``label_map`` is
    given, in which case every raw label must be one of its keys (this is how
    a test file is aligned to its training file).
    """
    examples = _read_examples(path)
    if not examples:
        raise FormatError(f"empty dataset: {path}")
    if label_map is None:
        label_map, _ = remap_labels([ex.label for ex in examples])
    else:
        unknown = sorted({ex.label for ex in examples} - set(label_map))
        if unknown:
            raise FormatError(f"labels {unknown} in {path} are not in the label map")
    seen = max((int(ex.indices[-1]) + 1 for ex in examples if ex.indices.size), default=0)
    if num_features is None:
        num_features = seen
    elif seen > num_features:
        raise FormatError(f"{path} uses feature index {seen} > num_features={num_features}")
    remapped = [ex.with_label(label_map[ex.label]) for ex in examples]
    return Dataset(remapped, num_features, dict(label_map))


def write_dataset(dataset, path, raw_labels=True):
    inverse = dataset.inverse_label_map
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            out = ex.with_label(inverse[ex.label]) if raw_labels else ex
            fh.write(format_libsvm_line(out) + "\n")


def subsample(dataset, cap, seed):
    """Uniform random subset of at most ``cap`` examples.

    Datasets already within the cap come back unchanged. Otherwise a seeded
    permutation is truncated to ``cap`` and the survivors keep file order.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    n = len(dataset)
    if n <= cap:
        return dataset
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.permutation(n)[:cap])
    return Dataset([dataset.examples[i] for i in keep], dataset.num_features, dict(dataset.label_map))


# Kernel tensor file
# ------------------
# little-endian: 8-byte magic, u32 version, u64 n_rows, u64 n_cols,
# u64 m_kernels, u8 dtype code, m_kernels x f64 bandwidths, payload.
# Payload is kernel-major, then row-major within each kernel.

KERNEL_MAGIC = b"LMKLKERN"
KERNEL_VERSION = 1
_HEADER = struct.Struct("<8sIQQQB")
_DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class KernelFileHeader:
    n_rows: int
    n_cols: int
    m_kernels: int
    dtype: str = "f64"
    bandwidths: tuple = ()
    version: int = KERNEL_VERSION

    def validate(self):
        for name in ("n_rows", "n_cols", "m_kernels"):
            if int(getattr(self, name)) < 1:
                raise FormatError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dtype not in _DTYPE_CODES:
            raise FormatError(f"unknown dtype {self.dtype!r}; expected f32 or f64")
        bw = np.asarray(self.bandwidths, dtype=np.float64)
        if bw.shape != (self.m_kernels,):
            raise FormatError(f"expected {self.m_kernels} bandwidths, got {bw.size}")
        if np.any(bw <= 0) or np.any(np.diff(bw) <= 0):
            raise FormatError("bandwidths must be positive and strictly increasing")

    @property
    def numpy_dtype(self):
        return _NUMPY_DTYPES[self.dtype]

    @property
    def payload_size(self):
        return self.n_rows * self.n_cols * self.m_kernels


def write_kernel_file(header, values, path):
    header.validate()
    arr = np.asarray(values)
    if arr.size != header.payload_size:
        raise SizeError(
            f"payload has {arr.size} values, header declares "
            f"{header.m_kernels}x{header.n_rows}x{header.n_cols}={header.payload_size}"
        )
    payload = np.ascontiguousarray(arr.reshape(-1), dtype=header.numpy_dtype)
    bw = np.asarray(header.bandwidths, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                KERNEL_MAGIC,
                header.version,
                header.n_rows,
                header.n_cols,
                header.m_kernels,
                _DTYPE_CODES[header.dtype],
            )
        )
        fh.write(bw.tobytes())
        fh.write(payload.tobytes())


def _read_header(fh, path):
    total = os.fstat(fh.fileno()).st_size
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise SizeError(f"{path}: file too short for a kernel header")
    magic, version, n_rows, n_cols, m, code = _HEADER.unpack(raw)
    if magic != KERNEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != KERNEL_VERSION:
        raise FormatError(f"{path}: unsupported kernel file version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    bw_raw = fh.read(8 * m)
    if len(bw_raw) < 8 * m:
        raise SizeError(f"{path}: truncated bandwidth table")
    header = KernelFileHeader(
        n_rows, n_cols, m, _CODE_DTYPES[code], tuple(np.frombuffer(bw_raw, dtype="<f8").tolist()), version
    )
    header.validate()
    expected = _HEADER.size + 8 * m + header.payload_size * header.numpy_dtype.itemsize
    if total != expected:
        raise SizeError(f"{path}: expected {expected} bytes, found {total}")
    return header


def read_kernel_header(path):
    """Validate a kernel file's header and size without loading the payload."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def read_kernel_file(path):
    """Return ``(header, values)`` with values shaped (m_kernels, n_rows, n_cols)."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        values = np.fromfile(fh, dtype=header.numpy_dtype, count=header.payload_size)
    return header, values.reshape(header.m_kernels, header.n_rows, header.n_cols)


def write_labels(labels, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)


def read_labels(path):
    with open(path, "r", encoding="utf-8") as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
