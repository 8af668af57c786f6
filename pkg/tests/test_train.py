"""Loss, optimizer, and the cross-validation loop."""

import json
import math

import numpy as np
import pytest

from dkepool.data import make_folds
from dkepool.errors import ConfigError, ContractError, NumericError
from dkepool.gradcheck import check_gradients
from dkepool.tensor import Tensor
from dkepool.train import (
    Adam,
    GraphClassifier,
    TrainConfig,
    cross_entropy,
    make_batch,
    run_cv,
    train_fold,
)

FAST = dict(gnn="gcn3", hidden=8, learning_rate=0.05, batch_size=4, folds=2, epochs=5)


class TestCrossEntropy:
    def test_uniform_logits_give_log2(self):
        loss = cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 0])
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_confident_correct_logit_drives_loss_to_zero(self):
        logits = np.array([[40.0, 0.0]])
        assert cross_entropy(Tensor(logits), [0]).item() < 1e-12

    def test_gradient_against_finite_differences(self, rng):
        logits = rng.uniform(-1, 1, (5, 3))
        labels = rng.integers(0, 3, size=5)
        err = check_gradients(lambda t: cross_entropy(t, labels), [logits])
        assert err <= 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((2, 2))), [0, 2])

    def test_label_count_mismatch(self):
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((2, 2))), [0])


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = Tensor([[1.0, -2.0]], requires_grad=True)
        opt = Adam([("p", p)], lr=0.1, weight_decay=0.0)
        p.grad = np.zeros((1, 2))
        opt.step()
        assert p.data.tolist() == [[1.0, -2.0]]

    def test_constant_gradient_descends_monotonically(self):
        p = Tensor([[0.0]], requires_grad=True)
        opt = Adam([("p", p)], lr=0.01, weight_decay=0.0)
        previous = 0.0
        for _ in range(20):
            p.grad = np.array([[1.0]])
            opt.step()
            assert p.data[0, 0] < previous
            previous = p.data[0, 0]

    def test_single_step_matches_hand_computation(self):
        p = Tensor([[1.0]], requires_grad=True)
        opt = Adam([("p", p)], lr=0.1, weight_decay=0.0)
        p.grad = np.array([[0.5]])
        opt.step()
        m_hat, v_hat = 0.5, 0.25  # bias-corrected first/second moments
        expected = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert p.data[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_decoupled_weight_decay_shrinks_before_step(self):
        p = Tensor([[2.0]], requires_grad=True)
        opt = Adam([("p", p)], lr=0.1, weight_decay=0.5)
        p.grad = np.array([[0.0]])
        opt.step()
        # Zero gradient: only the multiplicative decay applies.
        assert p.data[0, 0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5))

    def test_non_finite_gradient_aborts_with_diagnostics(self):
        p = Tensor([[1.0]], requires_grad=True)
        opt = Adam([("head", p)], lr=0.1)
        p.grad = np.array([[np.nan]])
        with pytest.raises(NumericError, match="head"):
            opt.step()


class TestConfig:
    def test_rejects_unknown_pool(self):
        with pytest.raises(ConfigError):
            TrainConfig(pool="bilinear")

    def test_rejects_unknown_gnn(self):
        with pytest.raises(ConfigError):
            TrainConfig(gnn="gat2")

    def test_fingerprint_stable_and_sensitive(self):
        a = TrainConfig(seed=1)
        b = TrainConfig(seed=1)
        c = TrainConfig(seed=2)
        assert a.fingerprint("X") == b.fingerprint("X")
        assert a.fingerprint("X") != c.fingerprint("X")
        assert a.fingerprint("X") != a.fingerprint("Y")


class TestRunCv:
    def test_separable_fixture_reaches_perfect_accuracy(self, separable_ds):
        for pool in ("mean", "dkepool_robust"):
            report = run_cv(separable_ds, TrainConfig(pool=pool, seed=1, **FAST))
            assert report.per_fold_accuracy == [1.0, 1.0], pool

    def test_leave_one_out_accuracies_are_binary(self, tmp_path):
        from dkepool.data import parse_tu
        from dkepool.synthetic import separable_fixture

        ds = parse_tu(separable_fixture(tmp_path, num_graphs=6), "SEPARABLE")
        config = TrainConfig(gnn="gcn3", hidden=8, pool="mean", epochs=2,
                             batch_size=4, folds=6, seed=0)
        # Three graphs per class over six folds: stratification must fall back.
        with pytest.warns(UserWarning, match="unstratified"):
            report = run_cv(ds, config)
        assert len(report.per_fold_accuracy) == 6
        assert set(report.per_fold_accuracy) <= {0.0, 1.0}

    def test_mean_and_std_recomputable(self, separable_ds):
        report = run_cv(separable_ds, TrainConfig(pool="sum", seed=2, **FAST))
        accs = np.array(report.per_fold_accuracy)
        assert abs(report.mean - accs.mean()) <= 1e-12
        assert abs(report.std - accs.std()) <= 1e-12

    def test_seed_determinism_bitwise(self, separable_ds):
        config = TrainConfig(pool="dkepool", snr_db=12.0, seed=5, **FAST)
        a = run_cv(separable_ds, config)
        b = run_cv(separable_ds, config)
        assert a.canonical_json() == b.canonical_json()
        assert a.per_fold_accuracy == b.per_fold_accuracy

    def test_fold_initializations_depend_only_on_seed_and_fold(self, separable_ds):
        config = TrainConfig(pool="mean", seed=9, **FAST)
        plan = make_folds(separable_ds, 2, config.seed)
        fingerprints = {}
        for fold in range(2):
            train_idx, test_idx = plan.split(fold)
            _, _, fp_a = train_fold(separable_ds, train_idx, test_idx, config,
                                    config.seed + fold)
            _, _, fp_b = train_fold(separable_ds, train_idx, test_idx, config,
                                    config.seed + fold)
            assert fp_a == fp_b
            fingerprints[fold] = fp_a
        assert fingerprints[0] != fingerprints[1]

    def test_training_loss_decreases_on_separable_fixture(self, separable_ds):
        config = TrainConfig(gnn="gcn3", hidden=8, pool="mean", epochs=12,
                             batch_size=4, folds=2, seed=3, learning_rate=0.05)
        plan = make_folds(separable_ds, 2, config.seed)
        train_idx, test_idx = plan.split(0)
        _, losses, _ = train_fold(separable_ds, train_idx, test_idx, config,
                                  config.seed)
        assert np.mean(losses[:5]) > np.mean(losses[-5:])

    def test_report_json_schema(self, separable_ds):
        config = TrainConfig(pool="max", seed=4, **FAST)
        report = run_cv(separable_ds, config)
        payload = json.loads(report.to_json())
        assert set(payload) >= {"dataset", "fingerprint", "per_fold", "mean",
                                "std", "seconds", "config"}
        canonical = json.loads(report.canonical_json())
        assert "seconds" not in canonical


class TestModel:
    def test_forward_shapes_and_noise_path(self, separable_ds, rng):
        config = TrainConfig(pool="dkepool_robust", d=6, snr_db=10.0, **FAST)
        model = GraphClassifier(separable_ds.feature_dim, separable_ds.num_classes,
                                config, np.random.default_rng(0))
        batch = make_batch(separable_ds, [0, 1, 2])
        clean = model.forward(batch, noise_seed=None)
        noisy = model.forward(batch, noise_seed=11)
        assert clean.shape == (3, separable_ds.num_classes)
        assert not np.array_equal(clean.data, noisy.data)
        again = model.forward(batch, noise_seed=11)
        assert np.array_equal(noisy.data, again.data)

    def test_projection_parameter_registered(self, separable_ds):
        config = TrainConfig(pool="dkepool", d=6, **FAST)
        model = GraphClassifier(separable_ds.feature_dim, separable_ds.num_classes,
                                config, np.random.default_rng(0))
        names = [name for name, _ in model.parameters()]
        assert "pool.projection" in names
        assert model.pooling.projection.shape == (config.hidden, 6)
