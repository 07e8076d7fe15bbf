import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def rbf_slices(N, M, B, seed, dim=2):
    """B kernel slices of shape (N, M) built from random points."""
    rng = np.random.default_rng(seed)
    train = rng.normal(size=(N, dim))
    batch = rng.normal(size=(B, dim))
    d_max = np.sqrt(((train[:, None] - train[None]) ** 2).sum(-1).max())
    d2 = ((batch[:, None] - train[None]) ** 2).sum(-1)
    ratios = np.linspace(0.1, 1.0, M)
    return np.stack([np.exp(-d2 / (2 * (r * d_max) ** 2)) for r in ratios], axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def synth_problem(kind="gauss2", n_train=60, n_test=40, seed=0):
    """Kernel stacks and 0-based labels for a small synthetic split."""
    from lmklnet.kernels import bandwidth_grid, build_cross_kernels, build_train_kernels, max_pairwise_distance
    from lmklnet.synth import generate

    Xtr, ytr, Xte, yte = generate(kind, n_train, n_test, seed)
    grid = bandwidth_grid(max_pairwise_distance(Xtr))
    train = build_train_kernels(Xtr, grid)
    test = build_cross_kernels(Xte, Xtr, grid)
    return train, (ytr > 0).astype(np.int64), test, (yte > 0).astype(np.int64)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
