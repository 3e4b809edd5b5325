"""Command-line pipeline.

Stages write into one run directory and append a line to its
``run_manifest.jsonl``::

    ingest      -> ingest.json          (entries + file checksums)
    preprocess  -> conditioned.npz
    augment     -> augmented.npz        (optional)
    features    -> features.npz
    train       -> models/<kind>.vptn, history/train_<kind>.csv
    evaluate    -> metrics.csv
    compare     -> runstats.csv, comparisons.csv, history/
    explain     -> importance.csv (+ importance_groups.csv)
    report      -> report.txt

Every stage seed is ``derive_seed(root_seed, stage)``. Exit codes: 0 ok,
2 config/usage, 3 missing upstream artifact, 4 bad input data, 5 numeric
failure, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .audio_io import load_corpus, read_manifest, synth_corpus
from .augment import augment_pool, derive_seed
from .config import RunConfig, dump_config, load_config
from .errors import (
    CorpusLoadError, DependencyError, FormatError, NumericError, SchemaError, VoicepathError,
)
from .experiments.stats import RunStats, StatComparison
from .experiments.study import (
    RunRecord, format_report, read_csv_rows, run_splits, run_study, write_history,
)
from .experiments.training import evaluate, fit_model, grid_search, write_leaderboard
from .explain import (
    grouped_importance, permutation_importance, read_importance_csv, write_importance_csv,
)
from .models import load_model, save_model
from .pipeline import (
    extract_records, feature_names, fit_standardizer, load_records, load_samples, save_records,
    save_samples, to_sequence_data,
)
from .preprocess import condition_clip

log = logging.getLogger("voicepath")

EXIT_CODES = [
    (SchemaError, 2),
    (DependencyError, 3),
    (CorpusLoadError, 4),
    (FormatError, 4),
    (NumericError, 5),
    (VoicepathError, 1),
]


class Run:
    """A run directory plus the effective configuration."""

    def __init__(self, root, cfg: RunConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.effective.yaml").write_text(dump_config(cfg))

    def path(self, name) -> Path:
        return self.root / name

    def need(self, name, stage: str) -> Path:
        p = self.root / name
        if not p.exists():
            raise DependencyError(name, stage)
        return p

    def seed(self, stage: str) -> int:
        return derive_seed(self.cfg.seed, stage)

    @property
    def provenance(self) -> str:
        return f"config_hash={self.cfg.digest()} seed={self.cfg.seed}"

    def record(self, stage: str, outputs, seed=None, **extra):
        entry = {
            "stage": stage,
            "version": __version__,
            "config_hash": self.cfg.digest(),
            "root_seed": self.cfg.seed,
            "stage_seed": seed,
            "outputs": {str(o): _sha256(self.root / o) for o in outputs if (self.root / o).is_file()},
            **extra,
        }
        with open(self.root / "run_manifest.jsonl", "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _records(run: Run, stage: str):
    return load_records(run.need("features.npz", stage))


def _n_frames(run: Run, records) -> int:
    return run.cfg.experiment.max_frames or max(r.frames.shape[0] for r in records)


def _policy(run: Run):
    return run.cfg.augment.policy() if run.cfg.augment.enabled else None


def _datasets(run: Run, records, stage: str):
    seed = run.seed("split")
    train, val, test = run_splits(records, run.cfg.experiment.split_spec(seed), seed, _policy(run))
    std = fit_standardizer(train)
    n = _n_frames(run, records)
    names = feature_names(run.cfg.features)
    return tuple(to_sequence_data(p, std, n, names) for p in (train, val, test))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth_corpus(args, cfg):
    out = Path(args.out)
    man = synth_corpus(out, args.n, args.seed, args.nodule_fraction, args.duration)
    print(f"wrote {len(man)} clips to {out}")


def cmd_ingest(run: Run, args):
    c = run.cfg.corpus
    root = Path(c.root)
    man_path = root / c.manifest
    if not man_path.is_file():
        raise CorpusLoadError([str(man_path)])
    manifest = read_manifest(man_path)
    samples = load_corpus(root, manifest)
    entries = [{"path": e.path, "speaker_id": e.speaker_id, "label": e.label,
                "sha256": _sha256(root / e.path)} for e in manifest]
    run.path("ingest.json").write_text(json.dumps({"root": str(root), "entries": entries}, indent=1))
    run.record("ingest", ["ingest.json"], n_clips=len(samples))
    print(f"ingested {len(samples)} clips")


def cmd_preprocess(run: Run, args):
    run.need("ingest.json", "preprocess")
    c = run.cfg.corpus
    root = Path(c.root)
    samples = load_corpus(root, read_manifest(root / c.manifest))
    out = []
    for s in samples:
        s.clip = condition_clip(s.clip, run.cfg.preprocess)
        out.append(s)
    save_samples(run.path("conditioned.npz"), out)
    run.record("preprocess", ["conditioned.npz"])
    print(f"conditioned {len(out)} clips")


def cmd_augment(run: Run, args):
    samples = load_samples(run.need("conditioned.npz", "augment"))
    seed = run.seed("augment")
    if run.cfg.augment.enabled:
        samples = samples + augment_pool(samples, run.cfg.augment.policy(), seed)
    save_samples(run.path("augmented.npz"), samples)
    n_aug = sum(s.augmented for s in samples)
    run.record("augment", ["augmented.npz"], seed, n_augmented=n_aug)
    print(f"{n_aug} augmented clips pooled")


def cmd_features(run: Run, args):
    src = run.path("augmented.npz")
    if not src.exists():
        src = run.need("conditioned.npz", "features")
    records = extract_records(load_samples(src), run.cfg.extraction(), args.workers)
    save_records(run.path("features.npz"), records)
    run.record("features", ["features.npz"], source=src.name)
    print(f"extracted features for {len(records)} clips")


def cmd_train(run: Run, args):
    records = _records(run, "train")
    train, val, _ = _datasets(run, records, "train")
    (run.root / "models").mkdir(exist_ok=True)
    (run.root / "history").mkdir(exist_ok=True)
    outputs = []
    seed = run.seed("train")
    for kind in run.cfg.model.kinds:
        cfg = run.cfg.model.config(kind, seed)
        if run.cfg.model.grid:
            cfg, cells = grid_search(cfg, run.cfg.model.grid, train, val)
            write_leaderboard(run.path(f"leaderboard_{kind}.csv"), cells)
            outputs.append(f"leaderboard_{kind}.csv")
        res = fit_model(cfg, train, val)
        save_model(run.path(f"models/{kind}.vptn"), res.model)
        write_history(run.path(f"history/train_{kind}.csv"), RunRecord(seed, history=res.history), run.provenance)
        outputs += [f"models/{kind}.vptn", f"history/train_{kind}.csv"]
        print(f"trained {kind}: {len(res.history)} epochs, best epoch {res.best_epoch}")
    run.record("train", outputs, seed)


def cmd_evaluate(run: Run, args):
    records = _records(run, "evaluate")
    _, _, test = _datasets(run, records, "evaluate")
    rows = []
    for kind in run.cfg.model.kinds:
        model = load_model(run.need(f"models/{kind}.vptn", "evaluate"))
        m = evaluate(model, test)
        c = m.confusion
        rows.append([kind, m.accuracy, m.precision, m.recall, m.f1, m.loss, c.tp, c.fp, c.fn, c.tn, int(m.degenerate)])
        print(f"{kind:<16} acc {m.accuracy:.4f}  f1 {m.f1:.4f}")
    with open(run.path("metrics.csv"), "w", newline="") as fh:
        fh.write(f"# {run.provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "accuracy", "precision", "recall", "f1", "loss", "tp", "fp", "fn", "tn", "degenerate"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:6]] + r[6:])
    run.record("evaluate", ["metrics.csv"])


def cmd_compare(run: Run, args):
    records = _records(run, "compare")
    e = run.cfg.experiment
    n_runs = args.n_runs or e.n_runs
    base = run.seed("compare")
    configs = [run.cfg.model.config(k, base) for k in run.cfg.model.kinds]
    results, comps = run_study(records, configs, n_runs, base, e.split_spec(base), run.root,
                               run.provenance, args.workers, _policy(run), _n_frames(run, records))
    hist = sorted(str(p.relative_to(run.root)) for p in (run.root / "history").glob("*_seed*.csv"))
    run.record("compare", ["runstats.csv", "comparisons.csv"] + hist, base, n_runs=n_runs)
    for r in results:
        s = r.stats
        print(f"{s.model:<16} mean {s.mean:.4f}  sd {s.sd:.4f}  n {s.n_runs}")


def cmd_explain(run: Run, args):
    records = _records(run, "explain")
    _, _, test = _datasets(run, records, "explain")
    x = run.cfg.explain
    model = load_model(run.need(f"models/{x.model}.vptn", "explain"))
    seed = run.seed("explain")
    rows = permutation_importance(model, test, test.feature_names, x.n_repeats, seed)
    write_importance_csv(run.path("importance.csv"), rows, run.provenance)
    outputs = ["importance.csv"]
    if x.grouped:
        write_importance_csv(run.path("importance_groups.csv"),
                             grouped_importance(model, test, test.feature_names, x.n_repeats, seed), run.provenance)
        outputs.append("importance_groups.csv")
    run.record("explain", outputs, seed)
    for r in rows[:5]:
        print(f"{r.rank:>2}. {r.feature:<12} {r.mean:.4f} +/- {r.sd:.4f}")


def cmd_report(run: Run, args):
    stats = [
        RunStats(r["model"], [], int(r["n_runs"]), float(r["mean_acc"]), float(r["sd"]),
                 (float(r["ci_lo"]), float(r["ci_hi"])))
        for r in read_csv_rows(run.need("runstats.csv", "report"))
    ]
    comps = [
        StatComparison(r["model_a"], r["model_b"], float(r["t_stat"]), float(r["p_value"]), float(r["cohens_d"]))
        for r in read_csv_rows(run.need("comparisons.csv", "report"))
    ]
    imp_path = run.path("importance.csv")
    importance = read_importance_csv(imp_path) if imp_path.exists() else None
    text = format_report(stats, comps, importance)
    run.path("report.txt").write_text(f"# {run.provenance}\n" + text)
    run.record("report", ["report.txt"])
    print(text, end="")


RUN_COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "augment": cmd_augment,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "explain": cmd_explain,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voicepath", description="Voice pathology feature and model pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", help="write a synthetic normal/nodule corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--nodule-fraction", type=float, default=0.5)
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("-v", "--verbose", action="store_true")

    for name in RUN_COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="YAML config file")
        c.add_argument("--run-dir", default="run")
        c.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        c.add_argument("--seed", type=int, help="root seed (overrides config)")
        c.add_argument("--workers", type=int, default=1, help="max worker processes")
        c.add_argument("-v", "--verbose", action="store_true")
        if name == "compare":
            c.add_argument("--n-runs", type=int, default=0, help="override experiment.n_runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth-corpus":
            cmd_synth_corpus(args, None)
            return 0
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.workers < 1:
            raise SchemaError("--workers must be >= 1")
        cfg = load_config(args.config, overrides)
        RUN_COMMANDS[args.command](Run(args.run_dir, cfg), args)
        return 0
    except VoicepathError as exc:
        code = next(c for t, c in EXIT_CODES if isinstance(exc, t))
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error [OSError]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
