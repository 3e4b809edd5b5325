import math

import numpy as np
import pytest

from voicepath.audio_io import load_corpus, synth_corpus
from voicepath.errors import DivergenceError, ParameterError
from voicepath.experiments.splits import SplitSpec
from voicepath.experiments.study import run_splits
from voicepath.experiments.training import (
    Confusion, Metrics, evaluate, fit_model, grid_cells, grid_search, metrics_from_predictions, train_loop,
    write_leaderboard,
)
from voicepath.models import ModelConfig, ModelKind, SequenceData
from voicepath.pipeline import extract_records, fit_standardizer, to_sequence_data


class Scripted:
    """Model whose validation probability follows a per-epoch script.

    State is the epoch counter, so the restored state tells which epoch's
    parameters came back."""

    kind = ModelKind.SimpleRNN

    def __init__(self, val_probs, train_loss=0.5):
        self.val_probs = val_probs
        self.train_loss = train_loss
        self.epoch = 0
        self.batches = 0

    def get_state(self):
        return self.epoch

    def set_state(self, s):
        self.epoch = s

    def train_batch(self, X, mask, y, seed):
        self.batches += 1
        if self.batches % 2 == 0:
            self.epoch += 1
        return self.train_loss

    def predict_proba(self, data):
        return np.full(len(data), self.val_probs(self.epoch))


def tiny(n, offset=0, positive=False):
    y = np.ones(n, int) if positive else np.arange(n) % 2
    return SequenceData(np.zeros((n, 3, 2)), np.ones((n, 3)), y, ids=[f"c{offset + i}" for i in range(n)])


def cfg(**kw):
    return ModelConfig(**{"batch_size": 4, "max_epochs": 12, "patience": 3, **kw})


class TestTrainLoop:
    # 8 training clips, batch 4: two batches per epoch, so the scripted epoch counter tracks real epochs

    def test_constant_val_loss_stops_after_patience(self):
        m = Scripted(lambda e: 0.5)
        res = train_loop(m, tiny(8), tiny(4, 100), cfg())
        assert len(res.history) == 1 + 3
        assert res.stopped_early and res.best_epoch == 1
        assert m.epoch == 1

    def test_strictly_decreasing_runs_to_max(self):
        # all-positive val set: rising probability lowers BCE by > 0.03 per epoch
        m = Scripted(lambda e: 0.5 + 0.03 * e)
        res = train_loop(m, tiny(8), tiny(4, 100, positive=True), cfg())
        losses = [h.val_loss for h in res.history]
        assert len(res.history) == 12 and not res.stopped_early
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert res.best_epoch == 12 and m.epoch == 12

    def test_improvement_below_min_delta_does_not_count(self):
        m = Scripted(lambda e: 0.5 + 1e-6 * e)
        res = train_loop(m, tiny(8), tiny(4, 100, positive=True), cfg())
        assert len(res.history) == 4 and res.best_epoch == 1

    def test_best_epoch_restored(self):
        # improves until epoch 4 then worsens
        m = Scripted(lambda e: 0.5 + 0.05 * min(e, 4) - 0.05 * max(e - 4, 0))
        res = train_loop(m, tiny(8), tiny(4, 100, positive=True), cfg())
        assert res.best_epoch == 4 and m.epoch == 4 and len(res.history) == 7

    def test_overlap_rejected(self):
        with pytest.raises(ParameterError):
            train_loop(Scripted(lambda e: 0.5), tiny(8), tiny(4), cfg())

    def test_divergence_reports_epoch(self):
        m = Scripted(lambda e: 0.5, train_loss=math.nan)
        with pytest.raises(DivergenceError) as exc:
            train_loop(m, tiny(8), tiny(4, 100), cfg())
        assert exc.value.epoch == 1


class TestMetrics:
    def test_nine_one_one_nine(self):
        m = Metrics.from_confusion(Confusion(9, 1, 1, 9))
        assert (m.accuracy, m.precision, m.recall, m.f1) == pytest.approx((0.9, 0.9, 0.9, 0.9))

    def test_all_correct(self):
        m = metrics_from_predictions([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0])
        assert m.accuracy == 1.0 and m.f1 == 1.0 and not m.degenerate

    def test_no_positive_predictions(self):
        m = metrics_from_predictions([0.1, 0.2, 0.3], [1, 0, 1])
        assert m.degenerate and m.precision == 0.0 and m.recall == 0.0

    def test_threshold_inclusive(self):
        assert metrics_from_predictions([0.5], [1]).confusion == Confusion(1, 0, 0, 0)

    def test_recomputed_from_confusion(self):
        r = np.random.default_rng(0)
        p, y = r.uniform(size=50), r.integers(0, 2, 50)
        m = metrics_from_predictions(p, y)
        direct = np.mean((p >= 0.5) == y)
        assert m.accuracy == Metrics.from_confusion(m.confusion).accuracy == direct
        assert m.loss == pytest.approx(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))

    def test_empty(self):
        with pytest.raises(ParameterError):
            metrics_from_predictions([], [])


@pytest.fixture(scope="module")
def separable(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus100")
    records = extract_records(load_corpus(root, synth_corpus(root, 100, seed=11)))
    n_frames = max(r.frames.shape[0] for r in records)

    def datasets(seed):
        train, val, test = run_splits(records, SplitSpec(), seed)
        std = fit_standardizer(train)
        return [to_sequence_data(p, std, n_frames) for p in (train, val, test)]

    return datasets


class TestEndToEnd:
    @pytest.mark.parametrize("seed", range(5))
    def test_simple_rnn_separates(self, separable, seed):
        tr, va, _ = separable(seed)
        res = fit_model(ModelConfig(ModelKind.SimpleRNN, seed=seed), tr, va)
        assert evaluate(res.model, va).accuracy >= 0.9


class TestGrid:
    def test_cells_in_sorted_key_order(self):
        cells = grid_cells(ModelConfig(), {"lr": [1e-3, 1e-2], "batch_size": [8, 16]})
        assert [c.overrides for c in cells] == [
            {"batch_size": 8, "lr": 1e-3}, {"batch_size": 8, "lr": 1e-2},
            {"batch_size": 16, "lr": 1e-3}, {"batch_size": 16, "lr": 1e-2}]

    def test_bad_grid(self):
        with pytest.raises(ParameterError):
            grid_cells(ModelConfig(), {"lr": []})
        with pytest.raises(ParameterError):
            grid_cells(ModelConfig(), {"layers": [1]})

    def test_singleton(self, separable):
        tr, va, _ = separable(0)
        base = ModelConfig(ModelKind.SimpleRNN, hidden_units=16, max_epochs=5)
        best, board = grid_search(base, {"lr": [0.01]}, tr, va)
        assert best == ModelConfig(ModelKind.SimpleRNN, hidden_units=16, max_epochs=5, lr=0.01)
        assert len(board) == 1

    def test_duplicate_config_identical(self, separable):
        tr, va, _ = separable(1)
        base = ModelConfig(ModelKind.SimpleRNN, hidden_units=16, max_epochs=5)
        _, board = grid_search(base, {"hidden_units": [16, 16]}, tr, va)
        assert board[0].val_accuracy == board[1].val_accuracy
        assert board[0].val_loss == board[1].val_loss

    def test_lr_grid(self, separable, tmp_path):
        tr, va, _ = separable(2)
        base = ModelConfig(ModelKind.SimpleRNN, hidden_units=16, max_epochs=8)
        best, board = grid_search(base, {"lr": [1e-3, 1e-1]}, tr, va)
        assert [c.overrides["lr"] for c in board] == [1e-3, 1e-1]
        for c in board:
            assert c.status.startswith("failed") or (math.isfinite(c.val_accuracy) and math.isfinite(c.val_loss))
        write_leaderboard(tmp_path / "lb.csv", board)
        lines = (tmp_path / "lb.csv").read_text().splitlines()
        assert lines[0] == "cell,lr,val_accuracy,val_loss,status" and len(lines) == 3
