"""ADAM and the mini-batch training loop."""

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import METRIC_FIELDS, _fmt, evaluate
from .errors import NonFiniteError
from .grads import backward
from .network import ARCHITECTURES, POOL_MODES, init_params, save_checkpoint

__all__ = [
    "TrainConfig",
    "AdamState",
    "EpochRecord",
    "Metrics",
    "adam_step",
    "shuffle_indices",
    "make_batches",
    "train",
]


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    hidden: int = 256
    seed: int = 0
    architecture: str = "shared"
    pool: str = "sum"
    eval_every: int = 1
    init_std: float = 0.05
    # wall time in the metrics; off gives byte-identical CSVs across reruns
    timing: bool = True

    def validate(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.pool not in POOL_MODES:
            raise ValueError(f"pool must be one of {POOL_MODES}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        tensors = params.trainable()
        return cls(
            {k: np.zeros_like(a) for k, a in tensors.items()},
            {k: np.zeros_like(a) for k, a in tensors.items()},
            0,
        )


def adam_step(params, grads, state, config):
    """One bias-corrected ADAM update, applied in place.

    ``params`` may be a :class:`ModelParams` or a plain name -> array dict.
    Returns ``(params, state)``.
    """
    tensors = params.trainable() if hasattr(params, "trainable") else params
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in tensor {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, theta in tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps_adam)
    return params, state


def shuffle_indices(n, seed, epoch):
    """Permutation of ``range(n)`` determined by ``(seed, epoch)``."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def make_batches(order, batch_size):
    """Split ``order`` into batches, folding a trailing singleton into its predecessor.

    Batch norm cannot normalize a batch of one, so the short last batch is
    kept unless it has exactly one element.
    """
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    seconds: float


@dataclass
class Metrics:
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


class _CsvStream:
    def __init__(self, path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRIC_FIELDS)
        self.fh.flush()

    def write(self, rec):
        self.writer.writerow([_fmt(getattr(rec, f)) for f in METRIC_FIELDS])
        self.fh.flush()

    def close(self):
        self.fh.close()


def _check_inputs(train_kernels, labels, test_kernels, test_labels):
    n = train_kernels.n
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"train stack has {n} samples but {labels.size} labels were given")
    if n < 2:
        raise ValueError("training needs at least two samples (batch norm)")
    if test_kernels is not None:
        test_labels = np.asarray(test_labels, dtype=np.int64)
        if test_kernels.n != n:
            raise ValueError(f"test stack is against {test_kernels.n} training samples, expected {n}")
        if test_kernels.m != train_kernels.m:
            raise ValueError(f"test stack has {test_kernels.m} kernels, train stack {train_kernels.m}")
        if test_labels.shape != (test_kernels.t,):
            raise ValueError(f"test stack has {test_kernels.t} samples but {test_labels.size} labels")
    return labels, test_labels


def train(
    train_kernels,
    labels,
    test_kernels=None,
    test_labels=None,
    config=None,
    num_classes=None,
    metrics_path=None,
    checkpoint_path=None,
    checkpoint_every=None,
):
    """Fit gating and classifier jointly with ADAM over shuffled mini-batches.

    Sample ``i`` is represented by its kernel slice ``train_kernels.values[i]``.
    Metrics are recorded every ``eval_every`` epochs and after the last one;
    the test set is only ever evaluated, never optimized on. Returns
    ``(params, metrics)``.
    """
    config = (config or TrainConfig()).validate()
    labels, test_labels = _check_inputs(train_kernels, labels, test_kernels, test_labels)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
        if test_labels is not None:
            num_classes = max(num_classes, int(test_labels.max()) + 1)
    num_classes = max(num_classes, 2)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")

    n = train_kernels.n
    params = init_params(
        n, config.hidden, num_classes, config.seed, config.init_std, config.architecture, config.pool
    )
    state = AdamState.zeros_like(params)
    metrics = Metrics()
    stream = _CsvStream(metrics_path) if metrics_path else None
    values = train_kernels.values
    start = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            loss_sum = 0.0
            correct = 0
            for b, idx in enumerate(make_batches(shuffle_indices(n, config.seed, epoch), config.batch_size)):
                y = labels[idx]
                try:
                    loss, grads, logits = backward(params, values[idx], y, "train", update_stats=True)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from None
                adam_step(params, grads, state, config)
                loss_sum += loss * idx.size
                correct += int(np.sum(np.argmax(logits, axis=1) == y))

            if epoch % config.eval_every == 0 or epoch == config.epochs:
                if test_kernels is not None:
                    test_loss, test_acc = evaluate(params, test_kernels, test_labels)
                else:
                    test_loss, test_acc = float("nan"), float("nan")
                seconds = time.perf_counter() - start if config.timing else 0.0
                rec = EpochRecord(epoch, loss_sum / n, correct / n, test_loss, test_acc, seconds)
                metrics.append(rec)
                if stream:
                    stream.write(rec)
            if checkpoint_path and checkpoint_every and epoch % checkpoint_every == 0:
                save_checkpoint(params, f"{checkpoint_path}.epoch{epoch}")
    finally:
        if stream:
            stream.close()
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, extra={"config": config.to_dict()})
    return params, metrics
