import json

import pytest

from voicepath.cli import main
from voicepath.config import RunConfig, dump_config, from_dict, load_config
from voicepath.errors import SchemaError
from voicepath.experiments.study import read_csv_rows
from voicepath.models import ModelKind

FAST = ["model.max_epochs=3", "model.hidden_units=8", "model.conv_filters=[4, 8]", "explain.n_repeats=3"]


def sets(*items):
    out = []
    for it in items:
        out += ["--set", it]
    return out


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == RunConfig()
        assert cfg.experiment.n_runs == 27 and len(cfg.model.kinds) == 6

    def test_unknown_top_level_key(self):
        with pytest.raises(SchemaError, match="colour"):
            from_dict({"colour": 1})

    def test_unknown_section_key(self):
        with pytest.raises(SchemaError, match="model.hiden_units"):
            from_dict({"model": {"hiden_units": 3}})

    def test_unknown_grid_key(self):
        with pytest.raises(SchemaError, match="model.grid.depth"):
            from_dict({"model": {"grid": {"depth": [1, 2]}}})

    def test_bad_value(self):
        with pytest.raises(SchemaError):
            from_dict({"experiment": {"ratios": [0.5, 0.5, 0.5]}})
        with pytest.raises(SchemaError):
            from_dict({"model": {"kinds": ["Transformer"]}})

    def test_overrides_and_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("seed: 3\nmodel:\n  hidden_units: 32\n")
        cfg = load_config(p, ["model.lr=0.01", "augment.enabled=false"])
        assert cfg.seed == 3 and cfg.model.params == {"hidden_units": 32, "lr": 0.01}
        assert not cfg.augment.enabled
        back = tmp_path / "d.yaml"
        back.write_text(dump_config(cfg))
        assert load_config(back) == cfg and load_config(back).digest() == cfg.digest()

    def test_digest_tracks_content(self):
        assert from_dict({"seed": 1}).digest() != from_dict({"seed": 2}).digest()
        assert from_dict({"seed": 1}).digest() == from_dict({"seed": 1}).digest()

    def test_bad_override(self):
        with pytest.raises(SchemaError):
            load_config(None, ["model.lr"])


class TestCommands:
    def test_unknown_key_exit_code(self, tmp_path, capsys):
        code = main(["train", "--run-dir", str(tmp_path), *sets("model.nodes=4")])
        assert code == 2
        assert "model.nodes" in capsys.readouterr().err

    def test_train_without_features(self, tmp_path, capsys):
        code = main(["train", "--run-dir", str(tmp_path / "run")])
        assert code == 3
        assert "features.npz" in capsys.readouterr().err

    def test_missing_corpus(self, tmp_path):
        assert main(["ingest", "--run-dir", str(tmp_path / "run"), *sets(f"corpus.root={tmp_path}/none")]) == 4

    def test_synth_corpus_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth-corpus", "--out", str(tmp_path / d), "--n", "12", "--seed", "7"]) == 0
        a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert a == b and len(a) == 13
        for rel in a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_small_pipeline(tmp_path, capsys):
    corpus, run = tmp_path / "corpus", tmp_path / "run"
    assert main(["synth-corpus", "--out", str(corpus), "--n", "40", "--seed", "3"]) == 0
    common = ["--run-dir", str(run), *sets(f"corpus.root={corpus}", *FAST)]
    for stage in ("ingest", "preprocess", "augment", "features", "train", "evaluate"):
        assert main([stage, *common]) == 0, stage
    assert main(["compare", "--n-runs", "2", *common]) == 0
    assert main(["explain", *common]) == 0
    assert main(["report", *common]) == 0

    stats = read_csv_rows(run / "runstats.csv")
    assert [r["model"] for r in stats] == [k.value for k in (
        ModelKind.SimpleRNN, ModelKind.RNNAttention, ModelKind.LSTM, ModelKind.LSTMAttention,
        ModelKind.SVM, ModelKind.CNN)]
    assert len(read_csv_rows(run / "comparisons.csv")) == 15
    assert len(read_csv_rows(run / "metrics.csv")) == 6
    assert len(read_csv_rows(run / "importance.csv")) == 91

    report = (run / "report.txt").read_text()
    assert "Pairwise comparisons" in report and "Top features" in report

    cfg_hash = load_config(run / "config.effective.yaml").digest()
    manifest = [json.loads(line) for line in (run / "run_manifest.jsonl").read_text().splitlines()]
    assert [m["stage"] for m in manifest] == ["ingest", "preprocess", "augment", "features", "train",
                                             "evaluate", "compare", "explain", "report"]
    assert all(m["config_hash"] == cfg_hash for m in manifest)
    for name in ("runstats.csv", "comparisons.csv", "importance.csv", "metrics.csv"):
        assert (run / name).read_text().startswith(f"# config_hash={cfg_hash} seed=0\n")
