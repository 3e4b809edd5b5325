from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from voicepath.augment import AugmentPolicy, transform_key
from voicepath.errors import ParameterError
from voicepath.experiments.splits import SplitSpec
from voicepath.experiments.stats import RunStats, compare_all
from voicepath.experiments.study import (
    read_csv_rows, repeat_runs, run_splits, run_study, format_report, table_from_summary, write_runstats,
)
from voicepath.models import ModelConfig, ModelKind

FAST = ModelConfig(hidden_units=8, max_epochs=3, batch_size=8)


@pytest.fixture(scope="module")
def imbalanced(small_records):
    """20 normal clips, 10 nodule clips, plus a pooled copy of every nodule
    clip under every grid transform."""
    normal = [r for r in small_records if r.label == 0]
    nodule = [r for r in small_records if r.label == 1][:10]
    policy = AugmentPolicy()
    pool = [replace(r, augmented=True, source_id=f"{r.source_id}|{transform_key(t)}")
            for r in nodule for t in policy.transforms()]
    return normal + nodule + pool, policy


class TestRunSplits:
    def test_no_pool_is_plain_split(self, small_records):
        tr, va, te = run_splits(small_records, SplitSpec(), 0)
        assert len(tr) + len(va) + len(te) == 40
        assert not any(r.augmented for r in tr + va + te)

    def test_policy_balances_train_only(self, imbalanced):
        records, policy = imbalanced
        for seed in range(4):
            tr, va, te = run_splits(records, SplitSpec(), seed, policy)
            assert not any(r.augmented for r in va + te)
            counts = Counter(r.label for r in tr)
            assert counts[0] == counts[1]
            train_src = {r.source_id for r in tr if not r.augmented}
            assert all(r.source_id.split("|")[0] in train_src for r in tr if r.augmented)

    def test_held_out_speakers_have_no_copies(self, imbalanced):
        records, policy = imbalanced
        tr, va, te = run_splits(records, SplitSpec(), 1, policy)
        held = {r.source_id for r in va + te}
        assert not any(r.source_id.split("|")[0] in held for r in tr if r.augmented)

    def test_without_policy_all_copies_of_train_sources(self, imbalanced):
        records, _ = imbalanced
        tr, va, te = run_splits(records, SplitSpec(), 2)
        n_nodule_train = sum(1 for r in tr if r.label == 1 and not r.augmented)
        assert sum(r.augmented for r in tr) == 9 * n_nodule_train
        assert not any(r.augmented for r in va + te)

    def test_missing_pool_entries_warn(self, imbalanced, caplog):
        records, policy = imbalanced
        thin = [r for r in records if not r.augmented or "noise" not in r.source_id]
        with caplog.at_level("WARNING"):
            tr, va, te = run_splits(thin, SplitSpec(), 0, policy)
        assert not any("noise" in r.source_id for r in tr)
        assert "missing from the pool" in caplog.text


class TestRepeatRuns:
    def test_bit_reproducible(self, small_records):
        a = repeat_runs(ModelKind.SimpleRNN, small_records, FAST, n_runs=2, base_seed=7)
        b = repeat_runs(ModelKind.SimpleRNN, small_records, FAST, n_runs=2, base_seed=7)
        assert [r.metrics.accuracy for r in a.runs] == [r.metrics.accuracy for r in b.runs]
        assert [h.val_loss for h in a.runs[1].history] == [h.val_loss for h in b.runs[1].history]
        assert a.stats == b.stats

    def test_seeds_consecutive(self, small_records):
        res = repeat_runs(ModelKind.SVM, small_records, None, n_runs=3, base_seed=10)
        assert [r.seed for r in res.runs] == [10, 11, 12]
        assert res.stats.n_runs == 3 and res.stats.model == "SVM"

    def test_parallel_matches_serial(self, small_records):
        a = repeat_runs(ModelKind.SVM, small_records, None, n_runs=2, base_seed=3)
        b = repeat_runs(ModelKind.SVM, small_records, None, n_runs=2, base_seed=3, workers=2)
        assert a.stats == b.stats

    def test_needs_two_runs(self, small_records):
        with pytest.raises(ParameterError):
            repeat_runs(ModelKind.SVM, small_records, None, n_runs=1)


class TestStudyOutputs:
    def test_csvs(self, small_records, tmp_path):
        configs = [replace(FAST, kind=ModelKind.SimpleRNN), ModelConfig(ModelKind.SVM)]
        results, comps = run_study(small_records, configs, 2, 0, out_dir=tmp_path, provenance="test run")
        rows = read_csv_rows(tmp_path / "runstats.csv")
        assert [r["model"] for r in rows] == ["SimpleRNN", "SVM"]
        assert float(rows[1]["mean_acc"]) == results[1].stats.mean
        assert (tmp_path / "runstats.csv").read_text().startswith("# test run\n")
        comp = read_csv_rows(tmp_path / "comparisons.csv")
        assert len(comp) == 1 and np.isfinite(float(comp[0]["p_value"]))
        hist = sorted(p.name for p in (tmp_path / "history").iterdir())
        assert hist == ["SVM_seed0.csv", "SVM_seed1.csv", "SimpleRNN_seed0.csv", "SimpleRNN_seed1.csv"]

    def test_float_round_trip(self, tmp_path):
        s = RunStats.from_accuracies("LSTM", [0.1, 0.2, 0.7])
        write_runstats(tmp_path / "r.csv", [s])
        row = read_csv_rows(tmp_path / "r.csv")[0]
        assert float(row["sd"]) == s.sd and float(row["ci_lo"]) == s.ci95[0]

    def test_report(self):
        stats = table_from_summary([("SimpleRNN", 0.9266, 0.0088, 27), ("LSTM", 0.9286, 0.0098, 27)])
        text = format_report(stats, compare_all(stats))
        assert "Simple RNN" in text and "(0.9233, 0.9299)" in text
        assert "SimpleRNN" in text.split("Pairwise")[1]
