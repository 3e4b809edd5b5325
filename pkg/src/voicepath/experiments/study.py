"""Repeated-seed studies: fresh split, standardization and training per run,
then per-model summaries and the pairwise comparison table."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..augment import derive_seed, plan_augmentation, transform_key
from ..errors import NumericError, ParameterError
from ..models import DISPLAY_NAMES, ModelConfig, ModelKind
from ..pipeline import feature_names, fit_standardizer, to_sequence_data
from .splits import SplitSpec, split_indices
from .stats import RunStats, compare_all
from .training import Metrics, evaluate, fit_model

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    seed: int
    metrics: Metrics = None
    history: list = field(default_factory=list)
    model_bytes: bytes = b""
    error: str = ""


@dataclass
class StudyResult:
    stats: RunStats
    runs: list


def run_splits(records, spec: SplitSpec, seed: int, policy=None) -> tuple:
    """Train/val/test record lists for one run. Splitting is done on original
    clips only. With a ``policy`` the augmentation plan is drawn from the
    training labels and filled from the pre-extracted pool (records whose
    ``source_id`` is ``"<source>|<transform>"``); without one, every pooled
    copy of a training source joins train. Val and test never see copies."""
    originals = [r for r in records if not r.augmented]
    pool = {r.source_id: r for r in records if r.augmented}
    idx = split_indices([r.label for r in originals], replace(spec, seed=seed),
                        [r.speaker_id for r in originals])
    train, val, test = ([originals[i] for i in part] for part in idx)
    if not pool:
        return train, val, test
    if policy is None:
        sources = {r.source_id for r in train}
        return train + [r for k, r in pool.items() if k.split("|", 1)[0] in sources], val, test
    plan = plan_augmentation([r.label for r in train], policy, derive_seed(seed, "augment"))
    extra = [pool.get(f"{train[i].source_id}|{transform_key(t)}") for i, t in plan]
    if any(r is None for r in extra):
        log.warning("seed %d: %d planned copies missing from the pool", seed, sum(r is None for r in extra))
    return train + [r for r in extra if r is not None], val, test


def single_run(records, config: ModelConfig, spec: SplitSpec, seed: int, n_frames: int,
               keep_model: bool = False, policy=None) -> RunRecord:
    train, val, test = run_splits(records, spec, seed, policy)
    std = fit_standardizer(train)
    names = feature_names()
    if records and len(names) != records[0].frames.shape[1] + records[0].exponents.size:
        names = []
    tr, va, te = (to_sequence_data(part, std, n_frames, names) for part in (train, val, test))
    cfg = replace(config, seed=seed)
    try:
        res = fit_model(cfg, tr, va)
    except NumericError as exc:
        log.warning("%s seed %d diverged: %s", config.kind.value, seed, exc)
        return RunRecord(seed, error=f"{type(exc).__name__}: {exc}")
    m = evaluate(res.model, te)
    return RunRecord(seed, m, res.history, res.model.to_bytes() if keep_model else b"")


def _run_star(args):
    return single_run(*args)


def repeat_runs(kind, records, config: ModelConfig = None, n_runs: int = 27, base_seed: int = 0,
                spec: SplitSpec = SplitSpec(), n_frames: int = None, workers: int = 1,
                keep_models: bool = False, policy=None) -> StudyResult:
    """``n_runs`` independent split/train/evaluate cycles with seeds
    ``base_seed .. base_seed + n_runs - 1``. Diverged runs are excluded and
    counted in ``RunStats.n_failed``."""
    if n_runs < 2:
        raise ParameterError("n_runs must be >= 2")
    records = list(records)
    config = replace(config or ModelConfig(), kind=ModelKind(kind))
    n_frames = n_frames or max(r.frames.shape[0] for r in records)
    jobs = [(records, config, spec, base_seed + i, n_frames, keep_models, policy) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(_run_star, jobs))
    else:
        runs = [single_run(*j) for j in jobs]
    ok = [r for r in runs if r.metrics is not None]
    stats = RunStats.from_accuracies(config.kind.value, [r.metrics.accuracy for r in ok],
                                     n_failed=len(runs) - len(ok))
    return StudyResult(stats, runs)


def run_study(records, configs, n_runs: int, base_seed: int, spec: SplitSpec = SplitSpec(),
              out_dir=None, provenance: str = "", workers: int = 1, policy=None,
              n_frames: int = None) -> tuple:
    """Repeat runs for every config, compare all pairs and optionally write
    ``runstats.csv``, ``comparisons.csv`` and ``history/<kind>_seed<k>.csv``."""
    records = list(records)
    n_frames = n_frames or max(r.frames.shape[0] for r in records)
    results = [repeat_runs(c.kind, records, c, n_runs, base_seed, spec, n_frames, workers, policy=policy) for c in configs]
    stats = [r.stats for r in results]
    comparisons = compare_all(stats)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "history").mkdir(parents=True, exist_ok=True)
        write_runstats(out / "runstats.csv", stats, provenance)
        write_comparisons(out / "comparisons.csv", comparisons, provenance)
        for res in results:
            for run in res.runs:
                write_history(out / "history" / f"{res.stats.model}_seed{run.seed}.csv", run, provenance)
    return results, comparisons


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _writer(fh, provenance: str):
    if provenance:
        fh.write(f"# {provenance}\n")
    return csv.writer(fh, lineterminator="\n")


def write_runstats(path, stats, provenance: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh, provenance)
        w.writerow(["model", "n_runs", "mean_acc", "sd", "ci_lo", "ci_hi"])
        for s in stats:
            w.writerow([s.model, s.n_runs, _fmt(s.mean), _fmt(s.sd), _fmt(s.ci95[0]), _fmt(s.ci95[1])])


def write_comparisons(path, comparisons, provenance: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh, provenance)
        w.writerow(["model_a", "model_b", "t_stat", "p_value", "cohens_d"])
        for c in comparisons:
            w.writerow([c.model_a, c.model_b, _fmt(c.t_stat), _fmt(c.p_value), _fmt(c.cohens_d)])


def write_history(path, run: RunRecord, provenance: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh, provenance)
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for h in run.history:
            w.writerow([h.epoch, _fmt(h.train_loss), _fmt(h.val_loss), _fmt(h.val_acc)])


def read_csv_rows(path) -> list:
    """Rows of an output CSV as dicts, skipping provenance comment lines."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def format_report(stats, comparisons, importance=None) -> str:
    """Plain-text summary of a study."""
    lines = ["Model comparison", ""]
    lines.append(f"{'model':<18}{'n':>4}{'mean acc':>10}{'sd':>9}{'95% CI':>22}")
    for s in stats:
        name = DISPLAY_NAMES.get(ModelKind(s.model), s.model) if s.model in ModelKind.__members__ else s.model
        lines.append(f"{name:<18}{s.n_runs:>4}{s.mean:>10.4f}{s.sd:>9.4f}"
                     f"   ({s.ci95[0]:.4f}, {s.ci95[1]:.4f})")
    lines += ["", "Pairwise comparisons (Welch t)", ""]
    lines.append(f"{'model A':<16}{'model B':<16}{'t':>10}{'p':>12}{'d':>9}")
    for c in comparisons:
        lines.append(f"{c.model_a:<16}{c.model_b:<16}{c.t_stat:>10.3f}{c.p_value:>12.3g}{c.cohens_d:>9.2f}")
    if importance:
        lines += ["", "Top features (permutation importance)", ""]
        for row in importance[:10]:
            lines.append(f"{row.rank:>3}. {row.feature:<14}{row.mean:>9.4f} +/- {row.sd:.4f}")
    failed = [s for s in stats if s.n_failed]
    for s in failed:
        lines.append(f"note: {s.model} had {s.n_failed} diverged run(s), excluded")
    return "\n".join(lines) + "\n"


def table_from_summary(rows) -> list:
    """RunStats list from ``(model, mean, sd, n)`` tuples."""
    return [RunStats.from_summary(m, mean, sd, n) for m, mean, sd, n in rows]

