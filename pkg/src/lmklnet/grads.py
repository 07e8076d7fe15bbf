"""Cross-entropy loss, exact backpropagation and a finite-difference oracle."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from .network import _batched, forward, softmax

__all__ = [
    "cross_entropy_loss",
    "batch_loss",
    "backward",
    "numeric_gradient",
    "loss_difference",
    "finite_diff_grad",
    "GradCheckReport",
    "grad_check",
]


def _log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy_loss(logits, label):
    """``-log softmax(logits)[label]`` via log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= int(label) < logits.shape[-1]:
        raise ValueError(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-_log_softmax(logits)[int(label)])


def _per_sample_ce(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"expected {logits.shape[0]} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    return -_log_softmax(logits)[np.arange(labels.size), labels]


def batch_loss(params, K, labels, mode="train"):
    """Mean cross-entropy of a batch; never touches running statistics."""
    Kb, _ = _batched(K, params.N)
    logits, _ = forward(params, Kb, mode, update_stats=False)
    return float(np.mean(_per_sample_ce(logits, labels)))


def backward(params, K, labels, mode="train", update_stats=False, batch_index=None):
    """Mean loss over the batch and its gradient w.r.t. every trainable tensor.

    ``K`` is (B, N, M). In train mode batch-norm statistics are treated as
    functions of the batch. Returns ``(loss, grads, logits)`` where ``grads``
    is keyed like :meth:`ModelParams.trainable`.
    """
    Kb, _ = _batched(K, params.N)
    labels = np.asarray(labels, dtype=np.int64)
    B, N, M = Kb.shape
    if B == 0:
        raise ValueError("empty batch")
    logits, tr = forward(params, Kb, mode, update_stats)
    losses = _per_sample_ce(logits, labels)
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        where = f" in batch {batch_index}" if batch_index is not None else ""
        raise NonFiniteError(f"non-finite loss{where}")

    H = params.H
    g = {}

    # classifier head
    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    g["W2"] = dlogits.T @ tr.r2
    g["b2"] = dlogits.sum(axis=0)
    da2 = (dlogits @ params.W2) * (tr.a2 > 0)
    g["W1"] = da2.T @ tr.r1
    g["b1"] = da2.sum(axis=0)
    dy1 = (da2 @ params.W1) * (tr.y1 > 0)

    # batch norm
    xhat = tr.bn_cache["xhat"]
    inv_std = tr.bn_cache["inv_std"]
    g["bn.gamma"] = np.sum(dy1 * xhat, axis=0)
    g["bn.beta"] = dy1.sum(axis=0)
    dxhat = dy1 * params.bn.gamma
    if mode == "train":
        dz1 = (inv_std / B) * (
            B * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
        )
    else:
        dz1 = dxhat * inv_std

    # first MLP layer
    Wf, _ = params.first_fc()
    gWf = dz1.T @ tr.v
    dv = dz1 @ Wf

    # pooling and joint softmax over all N*M gating scores
    scale = 1.0 / M if params.pool == "mean" else 1.0
    dh = (scale * dv)[:, :, None] * tr.K
    hT = tr.h.transpose(0, 2, 1)
    dhT = dh.transpose(0, 2, 1)
    dS = hT * (dhT - np.sum(hT * dhT, axis=(1, 2), keepdims=True))

    # attentional network
    dS2 = dS.reshape(B * M, N)
    U2 = tr.U.reshape(B * M, H)
    g["Wa"] = dS2.T @ U2
    g["ba"] = dS2.sum(axis=0)
    dA0 = (dS2 @ params.Wa) * (tr.A0.reshape(B * M, H) > 0)
    g["W0"] = dA0.T @ tr.X.reshape(B * M, N)
    g["b0"] = dA0.sum(axis=0)

    if params.architecture == "shared":
        g["W0"] = g["W0"] + gWf
        g["b0"] = g["b0"] + dz1.sum(axis=0)
    else:
        g["W0_mlp"] = gWf

    grads = {name: g[name] for name in params.trainable()}
    return loss, grads, logits


def numeric_gradient(f, x, epsilon=1e-5):
    """Central differences of scalar ``f`` at array ``x`` (perturbed in place)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for k in range(x.size):
        old = x.flat[k]
        x.flat[k] = old + epsilon
        fp = f(x)
        x.flat[k] = old - epsilon
        fm = f(x)
        x.flat[k] = old
        grad.flat[k] = (fp - fm) / (2.0 * epsilon)
    return grad


def _relu_pattern(tr):
    return np.concatenate([(tr.A0 > 0).ravel(), (tr.y1 > 0).ravel(), (tr.a2 > 0).ravel()])


def loss_difference(logits_plus, logits_minus, labels):
    """Mean cross-entropy at ``logits_plus`` minus that at ``logits_minus``.

    Computed from the logit differences, ``log1p(sum_k p_k expm1(d_k)) - d_y``
    with ``p`` the softmax of ``logits_minus``, which avoids cancelling two
    losses of order one against each other.
    """
    d = logits_plus - logits_minus
    p = softmax(logits_minus, axis=1)
    lse_diff = np.log1p(np.sum(p * np.expm1(d), axis=1))
    return float(np.mean(lse_diff - d[np.arange(labels.size), labels]))


def finite_diff_grad(params, K, labels, epsilon=1e-5, mode="train", return_rejected=False):
    """Central-difference gradient of the mean batch loss for every scalar.

    A probe is rejected when either side flips any ReLU on or off, since the
    difference quotient then straddles a kink. With ``return_rejected`` a
    boolean mask per tensor is returned alongside the gradients.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    Kb, _ = _batched(K, params.N)
    labels = np.asarray(labels, dtype=np.int64)
    _per_sample_ce(forward(params, Kb, mode, update_stats=False)[0], labels)
    base = _relu_pattern(forward(params, Kb, mode, update_stats=False)[1])

    def evaluate():
        logits, tr = forward(params, Kb, mode, update_stats=False)
        return logits, _relu_pattern(tr)

    grads = {}
    rejected = {}
    for name, arr in params.trainable().items():
        g = np.zeros_like(arr)
        bad = np.zeros(arr.shape, dtype=bool)
        for k in range(arr.size):
            old = arr.flat[k]
            arr.flat[k] = old + epsilon
            lp, pp = evaluate()
            arr.flat[k] = old - epsilon
            lm, pm = evaluate()
            arr.flat[k] = old
            g.flat[k] = loss_difference(lp, lm, labels) / (2.0 * epsilon)
            bad.flat[k] = not (np.array_equal(pp, base) and np.array_equal(pm, base))
        grads[name] = g
        rejected[name] = bad
    if return_rejected:
        return grads, rejected
    return grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_name: str
    worst_index: tuple
    analytic: float
    numeric: float
    tol: float
    n_checked: int
    n_rejected: int

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def to_text(self):
        return json.dumps(
            {
                "coordinate": f"{self.worst_name}{list(self.worst_index)}",
                "analytic": self.analytic,
                "numeric": self.numeric,
                "relative_error": self.max_rel_error,
                "tol": self.tol,
                "checked": self.n_checked,
                "rejected_probes": self.n_rejected,
                "passed": self.passed,
            },
            indent=2,
        )


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(params, K, labels, epsilon=1e-5, tol=1e-4, mode="train", analytic=None):
    """Compare analytic against central-difference gradients.

    ``analytic`` may be supplied (e.g. a deliberately corrupted copy);
    otherwise it comes from :func:`backward`.
    """
    if analytic is None:
        _, analytic, _ = backward(params, K, labels, mode)
    numeric, rejected = finite_diff_grad(params, K, labels, epsilon, mode, return_rejected=True)
    worst = (-1.0, "", (), 0.0, 0.0)
    checked = 0
    n_rej = 0
    for name in params.trainable():
        a, n, bad = analytic[name], numeric[name], rejected[name]
        err = np.where(bad, -1.0, relative_error(a, n))
        checked += int(np.sum(~bad))
        n_rej += int(np.sum(bad))
        if err.size and err.max() > worst[0]:
            k = int(np.argmax(err))
            idx = np.unravel_index(k, a.shape)
            worst = (float(err.flat[k]), name, tuple(int(i) for i in idx), float(a.flat[k]), float(n.flat[k]))
    return GradCheckReport(max(worst[0], 0.0), worst[1], worst[2], worst[3], worst[4], tol, checked, n_rej)
