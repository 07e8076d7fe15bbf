"""Inference, accuracy and per-class summaries of the learned kernel gating."""

import csv
import json
import math

import numpy as np

from .network import _batched, an_forward, forward

__all__ = [
    "predict",
    "predict_batch",
    "evaluate",
    "accuracy",
    "marginalize_gating",
    "class_mean_gating",
    "class_gating_stats",
    "METRIC_FIELDS",
    "write_metrics_csv",
    "read_metrics_csv",
    "export_results",
    "load_gating_export",
]

INFER_CHUNK = 256


def _argmax_first(logits):
    # np.argmax already returns the first maximum, i.e. the smallest class id
    return np.argmax(logits, axis=-1)


def predict(params, K):
    """Class id for one slice, or an array of ids for a batch."""
    logits, _ = forward(params, K, mode="infer")
    out = _argmax_first(logits)
    return int(out) if np.ndim(out) == 0 else out


def _chunks(n, size=INFER_CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _stack_values(stack):
    return stack.values if hasattr(stack, "values") else np.asarray(stack)


def predict_batch(params, stack):
    values = _stack_values(stack)
    return np.concatenate([predict(params, values[s]) for s in _chunks(len(values))])


def evaluate(params, stack, labels):
    """Mean cross-entropy and accuracy in inference mode."""
    values = _stack_values(stack)
    labels = np.asarray(labels, dtype=np.int64)
    if len(values) == 0:
        raise ValueError("empty evaluation set")
    if labels.shape != (len(values),):
        raise ValueError(f"{len(values)} samples but {labels.size} labels")
    total = 0.0
    correct = 0
    for s in _chunks(len(values)):
        logits, _ = forward(params, values[s], mode="infer")
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        y = labels[s]
        total += float(-logp[np.arange(y.size), y].sum())
        correct += int(np.sum(_argmax_first(logits) == y))
    return total / len(values), correct / len(values)


def accuracy(params, stack, labels):
    """Fraction of samples whose predicted class equals the label."""
    labels = np.asarray(labels, dtype=np.int64)
    values = _stack_values(stack)
    if len(values) == 0:
        raise ValueError("empty test set")
    if labels.shape != (len(values),):
        raise ValueError(f"{len(values)} samples but {labels.size} labels")
    return float(np.mean(predict_batch(params, values) == labels))


def marginalize_gating(params, K):
    """Sum the gating matrix over training samples: an M-vector summing to 1.

    Accepts one slice (N, M) or a batch (B, N, M).
    """
    return an_forward(params, K).sum(axis=-2)


def _per_sample_marginals(params, stack):
    values = _stack_values(stack)
    return np.concatenate([marginalize_gating(params, _batched(values[s])[0]) for s in _chunks(len(values))])


def class_gating_stats(params, stack, labels, num_classes=None):
    """Per-class mean and standard deviation of the marginal kernel weights.

    Returns two (C, M) arrays. Every class must occur at least once.
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = params.C if num_classes is None else num_classes
    w = _per_sample_marginals(params, stack)
    if labels.shape != (w.shape[0],):
        raise ValueError(f"{w.shape[0]} samples but {labels.size} labels")
    mean = np.empty((C, w.shape[1]))
    std = np.empty((C, w.shape[1]))
    for c in range(C):
        rows = w[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no samples in the evaluation set")
        mean[c] = rows.mean(axis=0)
        std[c] = rows.std(axis=0)
    return mean, std


def class_mean_gating(params, stack, labels, num_classes=None):
    """(C, M) matrix: row c is the average marginal gating over class c."""
    return class_gating_stats(params, stack, labels, num_classes)[0]


METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc", "seconds")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, f)) for f in METRIC_FIELDS])


def read_metrics_csv(path):
    """List of dicts, epoch as int and everything else as float."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: int(v) if k == "epoch" else float(v) for k, v in row.items()} for row in rows]


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def export_results(metrics, gating_mean, path_prefix, gating_std=None, config=None, label_map=None):
    """Write ``<prefix>_metrics.csv`` and ``<prefix>_gating.json``.

    Returns the two paths.
    """
    csv_path = f"{path_prefix}_metrics.csv"
    json_path = f"{path_prefix}_gating.json"
    write_metrics_csv(metrics.records if hasattr(metrics, "records") else metrics, csv_path)
    gm = np.asarray(gating_mean, dtype=np.float64)
    doc = {
        "num_classes": gm.shape[0],
        "num_kernels": gm.shape[1],
        "mean": [[_json_float(x) for x in row] for row in gm],
    }
    if gating_std is not None:
        doc["std"] = [[_json_float(x) for x in row] for row in np.asarray(gating_std, dtype=np.float64)]
    if config is not None:
        doc["config"] = config
    if label_map is not None:
        doc["label_map"] = {str(k): int(v) for k, v in label_map.items()}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def load_gating_export(path):
    """Return ``(mean, std_or_None, document)`` from a gating JSON export."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    mean = np.array(doc["mean"], dtype=np.float64)
    std = np.array(doc["std"], dtype=np.float64) if "std" in doc else None
    return mean, std, doc
