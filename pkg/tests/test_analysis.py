import csv

import numpy as np
import pytest

import oracles
from conftest import rbf_slices
from lmklnet.analysis import (
    accuracy,
    class_gating_stats,
    class_mean_gating,
    evaluate,
    export_results,
    load_gating_export,
    marginalize_gating,
    predict,
    predict_batch,
    read_metrics_csv,
)
from lmklnet.network import forward, init_params
from lmklnet.optim import EpochRecord, Metrics


def _head_only(C, logits):
    """Model whose logits are exactly ``logits`` regardless of input."""
    p = init_params(3, 2, C, seed=0)
    p.W2[...] = 0
    p.b2[...] = logits
    return p


class TestPredict:
    def test_argmax(self):
        assert predict(_head_only(3, [0.1, 0.9, 0.3]), np.ones((3, 2))) == 1

    def test_tie_goes_to_smallest(self):
        assert predict(_head_only(2, [0.5, 0.5]), np.ones((3, 2))) == 0

    def test_matches_forward(self):
        p = init_params(8, 5, 4, seed=2, std=0.5)
        K = rbf_slices(8, 3, 6, seed=3)
        logits, _ = forward(p, K, mode="infer")
        np.testing.assert_array_equal(predict(p, K), np.argmax(logits, axis=1))

    def test_logit_shift_invariant(self):
        p = init_params(8, 5, 4, seed=2, std=0.5)
        K = rbf_slices(8, 3, 6, seed=3)
        before = predict(p, K)
        p.b2 += 17.0
        np.testing.assert_array_equal(predict(p, K), before)


class TestAccuracy:
    def test_all_correct_and_all_wrong(self):
        p = init_params(6, 4, 3, seed=1, std=0.5)
        K = rbf_slices(6, 2, 10, seed=0)
        pred = predict_batch(p, K)
        assert accuracy(p, K, pred) == 1.0
        assert accuracy(p, K, (pred + 1) % 3) == 0.0

    def test_random_predictor(self, rng):
        p = init_params(6, 4, 4, seed=1, std=0.5)
        K = rbf_slices(6, 2, 10000, seed=0)
        labels = rng.integers(0, 4, size=10000)
        assert abs(accuracy(p, K, labels) - 0.25) <= 0.02

    def test_relabeling_consistent(self, rng):
        p = init_params(6, 4, 3, seed=1, std=0.5)
        K = rbf_slices(6, 2, 50, seed=0)
        labels = rng.integers(0, 3, size=50)
        perm = np.array([2, 0, 1])
        pred = predict_batch(p, K)
        assert np.mean(perm[pred] == perm[labels]) == accuracy(p, K, labels)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy(init_params(3, 2, 2, seed=0), np.zeros((0, 3, 2)), [])

    def test_evaluate_agrees(self):
        p = init_params(6, 4, 3, seed=1, std=0.5)
        K = rbf_slices(6, 2, 300, seed=0)
        labels = np.arange(300) % 3
        loss, acc = evaluate(p, K, labels)
        assert acc == accuracy(p, K, labels)
        assert loss > 0


class TestMarginalize:
    def test_uniform(self):
        p = init_params(5, 3, 2, seed=0)
        p.W0[...] = 0
        p.Wa[...] = 0
        np.testing.assert_allclose(marginalize_gating(p, np.ones((5, 4))), 0.25, rtol=1e-15)

    def test_concentrated(self):
        # a large positive ba row pushes all mass into one training sample,
        # and a column with larger kernel values wins through the ReLU path
        p = init_params(4, 3, 2, seed=0)
        p.W0[...] = 1.0
        p.Wa[...] = 10.0
        K = np.zeros((4, 3))
        K[:, 1] = 5.0
        w = marginalize_gating(p, K)
        assert w[1] > 1 - 1e-12

    def test_loop_oracle(self, rng):
        p = init_params(7, 4, 2, seed=5, std=0.5)
        K = rbf_slices(7, 3, 1, seed=1)[0]
        h = oracles.gating(p.W0.tolist(), p.b0.tolist(), p.Wa.tolist(), p.ba.tolist(), K.tolist())
        np.testing.assert_allclose(marginalize_gating(p, K), oracles.marginal(h), rtol=1e-14)

    def test_probability_vector(self):
        p = init_params(7, 4, 2, seed=5, std=1.0)
        w = marginalize_gating(p, rbf_slices(7, 3, 20, seed=1))
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


class TestClassGating:
    def test_rows_sum_to_one(self):
        p = init_params(6, 4, 3, seed=0, std=0.5)
        K = rbf_slices(6, 4, 30, seed=2)
        G = class_mean_gating(p, K, np.arange(30) % 3)
        assert G.shape == (3, 4)
        np.testing.assert_allclose(G.sum(axis=1), 1.0, atol=1e-6)

    def test_single_sample_per_class(self):
        p = init_params(6, 4, 2, seed=0, std=0.5)
        K = rbf_slices(6, 4, 2, seed=2)
        G = class_mean_gating(p, K, [1, 0])
        np.testing.assert_allclose(G[1], marginalize_gating(p, K[0]), rtol=1e-15)
        np.testing.assert_allclose(G[0], marginalize_gating(p, K[1]), rtol=1e-15)

    def test_identical_gating_identical_rows(self):
        p = init_params(6, 4, 3, seed=0, std=0.5)
        K = np.repeat(rbf_slices(6, 4, 1, seed=2), 9, axis=0)
        G = class_mean_gating(p, K, np.arange(9) % 3)
        np.testing.assert_allclose(G, np.tile(G[0], (3, 1)), rtol=1e-15)

    def test_per_sample_averaging_oracle(self):
        p = init_params(6, 4, 2, seed=0, std=0.5)
        K = rbf_slices(6, 4, 12, seed=2)
        labels = np.array([0, 1] * 6)
        mean, std = class_gating_stats(p, K, labels)
        for c in range(2):
            rows = [oracles.marginal(oracles.gating(
                p.W0.tolist(), p.b0.tolist(), p.Wa.tolist(), p.ba.tolist(), K[i].tolist()))
                for i in range(12) if labels[i] == c]
            expected = [sum(r[m] for r in rows) / len(rows) for m in range(4)]
            np.testing.assert_allclose(mean[c], expected, rtol=1e-12)
        assert np.all(std >= 0)

    def test_empty_class_named(self):
        p = init_params(6, 4, 3, seed=0)
        with pytest.raises(ValueError, match="class 2"):
            class_mean_gating(p, rbf_slices(6, 2, 4, seed=0), [0, 1, 0, 1])


class TestExport:
    def test_roundtrip(self, tmp_path, rng):
        m = Metrics()
        m.append(EpochRecord(1, 0.7, 0.5, float("nan"), float("nan"), 0.0))
        m.append(EpochRecord(2, 0.1 + 0.2, 2 / 3, 0.4, 0.75, 1.25))
        G = rng.random((2, 5))
        S = rng.random((2, 5))
        csv_path, json_path = export_results(m, G, tmp_path / "run", S, {"seed": 0}, {-1: 0, 1: 1})
        rows = read_metrics_csv(csv_path)
        assert len(rows) == 2
        assert rows[1]["train_loss"] == 0.1 + 0.2
        assert rows[1]["train_acc"] == 2 / 3
        assert np.isnan(rows[0]["test_acc"])
        mean, std, doc = load_gating_export(json_path)
        np.testing.assert_array_equal(mean, G)
        np.testing.assert_array_equal(std, S)
        assert doc["config"] == {"seed": 0}
        assert doc["label_map"] == {"-1": 0, "1": 1}

    def test_header_only(self, tmp_path):
        csv_path, _ = export_results(Metrics(), np.full((2, 3), 1 / 3), tmp_path / "e")
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))
        assert rows == [["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "seconds"]]
