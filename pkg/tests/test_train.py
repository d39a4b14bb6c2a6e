import math

import numpy as np
import pytest

from ctgformer.errors import TrainError
from ctgformer.data import GenSpec, generate_cohort, split
from ctgformer.evaluation import auc
from ctgformer.model import (
    ModelConfig,
    init_params,
    load_checkpoint,
    named_tensors,
    save_checkpoint,
)
from ctgformer.train import (
    Adam,
    TrainConfig,
    bce_loss,
    bce_loss_batch,
    finetune,
    fit,
    predictions_for,
    train_epoch,
    write_train_log,
)
from ctgformer.numcore import Graph, Tensor, backward

SMALL_CFG = ModelConfig(seq_len=960, patch_len=32, stride=32, n_layers=1, n_heads=2,
                        d_model=16, d_ff=16, dropout=0.0, fc_dropout=0.0, attn_dropout=0.0)


@pytest.fixture(scope="module")
def small_sets():
    cohort = generate_cohort(GenSpec(n_per_class=16, seed=1))
    train, val = split(cohort, 0.75, seed=1)
    return train.traces, val.traces


class TestBceLoss:
    def test_perfect_prediction_is_zero(self):
        assert bce_loss(1.0, 1) == pytest.approx(0.0, abs=1e-11)
        assert bce_loss(0.0, 0) == pytest.approx(0.0, abs=1e-11)

    def test_half_gives_log_two(self):
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_symmetry(self):
        assert bce_loss(0.5, 0) == bce_loss(0.5, 1)

    def test_always_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            assert bce_loss(rng.random(), int(rng.integers(0, 2))) >= 0.0

    def test_batch_version_matches_scalar_mean(self):
        rng = np.random.default_rng(1)
        probs = rng.uniform(0.01, 0.99, 16)
        labels = rng.integers(0, 2, 16).astype(float)
        batch = bce_loss_batch(Tensor(probs), labels).item()
        scalar = np.mean([bce_loss(p, int(y)) for p, y in zip(probs, labels)])
        assert batch == pytest.approx(scalar, abs=1e-12)

    def test_batch_gradient_sign(self):
        probs = Tensor(np.array([0.3, 0.8]), requires_grad=True)
        with Graph() as g:
            loss = bce_loss_batch(probs, np.array([1.0, 0.0]))
        backward(loss, g)
        assert probs.grad[0] < 0  # raising p toward label 1 lowers loss
        assert probs.grad[1] > 0


class TestAdamAndEpoch:
    def test_zero_learning_rate_keeps_params(self, small_sets):
        train_traces, _ = small_sets
        from ctgformer.data import stack_traces

        params = init_params(SMALL_CFG, 3)
        before = {n: t.data.copy() for n, t in named_tensors(params).items()}
        tc = TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=1, seed=0)
        opt = Adam(named_tensors(params), lr=0.0)
        train_epoch(params, SMALL_CFG, tc, stack_traces(train_traces),
                    np.random.default_rng(0), opt)
        for n, t in named_tensors(params).items():
            assert t.data.tobytes() == before[n].tobytes(), n

    def test_same_seed_identical_params(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=3, seed=9)
        p1, _ = fit(SMALL_CFG, tc, train_traces, val_traces)
        p2, _ = fit(SMALL_CFG, tc, train_traces, val_traces)
        for (n1, t1), (n2, t2) in zip(named_tensors(p1).items(), named_tensors(p2).items()):
            assert t1.data.tobytes() == t2.data.tobytes(), n1

    def test_loss_decreases_on_separable_set(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=20,
                         patience=20, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        first = np.mean([e.train_loss for e in log.epochs[:3]])
        last = np.mean([e.train_loss for e in log.epochs[-3:]])
        assert last < first

    def test_empty_dataset_rejected(self, small_sets):
        _, val_traces = small_sets
        tc = TrainConfig(max_epochs=1)
        with pytest.raises(TrainError):
            fit(SMALL_CFG, tc, [], val_traces)


class TestFit:
    def test_improving_auc_runs_to_max_epochs(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=4,
                         patience=10, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        assert log.stop_reason == "max_epochs"
        assert len(log.epochs) == 4

    def test_frozen_auc_stops_after_patience_plus_one(self, small_sets):
        train_traces, val_traces = small_sets
        # lr=0 freezes the parameters, hence the validation AUC
        tc = TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=60,
                         patience=10, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        assert log.stop_reason == "early_stop"
        assert len(log.epochs) == 11  # patience + 1
        assert log.best_epoch == 1

    def test_returned_params_reproduce_best_auc(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=10,
                         patience=10, seed=1)
        params, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        reval = auc(predictions_for(val_traces, SMALL_CFG, params))
        assert abs(reval - log.best_val_auc) <= 1e-12
        assert log.best_val_auc == max(e.val_auc for e in log.epochs)

    def test_best_epoch_is_first_attaining_max(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=12,
                         patience=20, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        best = log.best_val_auc
        firsts = [e.epoch for e in log.epochs if e.val_auc >= best - 1e-12]
        assert log.best_epoch == firsts[0]

    def test_epochs_after_best_bounded_by_patience(self, small_sets):
        train_traces, val_traces = small_sets
        for seed in (0, 1, 2):
            tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=15,
                             patience=3, seed=seed)
            _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
            assert log.epochs[-1].epoch - log.best_epoch <= 3

    def test_deterministic_log_key(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=3, seed=4)
        _, log1 = fit(SMALL_CFG, tc, train_traces, val_traces)
        _, log2 = fit(SMALL_CFG, tc, train_traces, val_traces)
        assert log1.key() == log2.key()

    def test_overlapping_sets_rejected(self, small_sets):
        train_traces, val_traces = small_sets
        with pytest.raises(TrainError, match="overlap"):
            fit(SMALL_CFG, TrainConfig(max_epochs=1), train_traces,
                train_traces[:2])

    def test_stop_hook_prunes(self, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=10, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces,
                     stop_hook=lambda epoch, val_auc: epoch >= 2)
        assert log.stop_reason == "pruned"
        assert len(log.epochs) == 2


class TestFinetune:
    def make_checkpoint(self, tmp_path, small_sets, seed=0):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=3e-3, batch_size=8, max_epochs=3, seed=seed)
        params, _ = fit(SMALL_CFG, tc, train_traces, val_traces)
        path = tmp_path / "pre.ckpt"
        save_checkpoint(params, SMALL_CFG, path)
        return path

    def test_zero_epoch_finetune_equals_zero_shot(self, tmp_path, small_sets):
        train_traces, val_traces = small_sets
        ckpt = self.make_checkpoint(tmp_path, small_sets)
        params, log, cfg = finetune(ckpt, train_traces, val_traces,
                                    TrainConfig(max_epochs=0))
        pre_params, pre_cfg = load_checkpoint(ckpt)
        zero_shot = auc(predictions_for(val_traces, pre_cfg, pre_params))
        assert log.best_val_auc == pytest.approx(zero_shot, abs=1e-15)
        assert log.best_epoch == 0 and not log.epochs

    def test_config_mismatch_rejected(self, tmp_path, small_sets):
        train_traces, val_traces = small_sets
        ckpt = self.make_checkpoint(tmp_path, small_sets)
        wrong = ModelConfig(seq_len=960, patch_len=32, stride=32, n_layers=1,
                            n_heads=2, d_model=32, d_ff=16)
        with pytest.raises(TrainError, match="match"):
            finetune(ckpt, train_traces, val_traces, TrainConfig(max_epochs=1),
                     expect_config=wrong)

    def test_finetune_resumes_training(self, tmp_path, small_sets):
        train_traces, val_traces = small_sets
        ckpt = self.make_checkpoint(tmp_path, small_sets)
        params, log, cfg = finetune(ckpt, train_traces, val_traces,
                                    TrainConfig(learning_rate=1e-3, batch_size=8,
                                                max_epochs=2, seed=1))
        assert len(log.epochs) == 2
        assert cfg == SMALL_CFG


class TestTrainLogIO:
    def test_lines_parse(self, tmp_path, small_sets):
        train_traces, val_traces = small_sets
        tc = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=2, seed=0)
        _, log = fit(SMALL_CFG, tc, train_traces, val_traces)
        path = tmp_path / "log.csv"
        write_train_log(log, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,val_auc,seconds"
        assert len(lines) == len(log.epochs) + 1
        for line, rec in zip(lines[1:], log.epochs):
            epoch, loss, val_auc, seconds = line.split(",")
            assert int(epoch) == rec.epoch
            assert float(loss) == rec.train_loss
            assert float(val_auc) == rec.val_auc
            assert float(seconds) >= 0.0
