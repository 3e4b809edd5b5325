"""Early-stopped training, evaluation metrics and grid search."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..augment import derive_seed
from ..errors import DivergenceError, NumericError, ParameterError, VoicepathError
from ..models import ModelConfig, ModelKind, SequenceData, build
from ..nn.network import bce_loss

log = logging.getLogger(__name__)

MIN_DELTA = 1e-4


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: Confusion
    loss: float
    degenerate: bool = False  # no positive predictions; precision set to 0

    @classmethod
    def from_confusion(cls, c: Confusion, loss: float = math.nan) -> "Metrics":
        if c.total == 0:
            raise ParameterError("empty confusion matrix")
        acc = (c.tp + c.tn) / c.total
        degenerate = c.tp + c.fp == 0
        p = 0.0 if degenerate else c.tp / (c.tp + c.fp)
        r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(acc, p, r, f1, c, loss, degenerate)


def metrics_from_predictions(prob, y, loss=None) -> Metrics:
    prob = np.asarray(prob, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if prob.size == 0:
        raise ParameterError("evaluation set is empty")
    pred = (prob >= 0.5).astype(int)
    c = Confusion(
        int(np.sum((pred == 1) & (y == 1))), int(np.sum((pred == 1) & (y == 0))),
        int(np.sum((pred == 0) & (y == 1))), int(np.sum((pred == 0) & (y == 0))),
    )
    if loss is None:
        loss = bce_loss(prob, y)[0]
    return Metrics.from_confusion(c, loss)


def evaluate(model, data: SequenceData) -> Metrics:
    """Threshold-0.5 metrics and mean BCE of ``model`` on ``data``."""
    if len(data) == 0:
        raise ParameterError("evaluation set is empty")
    return metrics_from_predictions(model.predict_proba(data), data.y)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _batches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # batch norm needs >= 2 examples; fold a trailing singleton into its neighbour
    if len(out) > 1 and out[-1].size == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def train_loop(model, train: SequenceData, val: SequenceData, config: ModelConfig = None,
               min_delta: float = MIN_DELTA) -> TrainResult:
    """Mini-batch Adam with early stopping on validation loss.

    Training stops once validation loss has not improved by ``min_delta`` for
    ``patience`` consecutive epochs; the best-epoch parameters are restored.
    SVMs are fit once and get a single history row.
    """
    config = config or model.config
    if set(train.ids) & set(val.ids):
        raise ParameterError("train and val sets overlap")
    if model.kind == ModelKind.SVM:
        model.fit(train)
        tm, vm = evaluate(model, train), evaluate(model, val)
        return TrainResult(model, [EpochRecord(1, tm.loss, vm.loss, vm.accuracy)], 1)

    best_loss, best_state, best_epoch = math.inf, model.get_state(), 0
    history, waited, stopped = [], 0, False
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng(derive_seed(config.seed, "epoch", epoch))
        losses, sizes = [], []
        for b, idx in enumerate(_batches(len(train), config.batch_size, rng)):
            try:
                loss = model.train_batch(train.X[idx], train.mask[idx], train.y[idx],
                                         derive_seed(config.seed, "dropout", epoch, b))
            except NumericError as exc:
                raise DivergenceError(epoch, math.nan) from exc
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            losses.append(loss)
            sizes.append(idx.size)
        train_loss = float(np.average(losses, weights=sizes))
        try:
            vm = evaluate(model, val)
        except NumericError as exc:
            raise DivergenceError(epoch, math.nan) from exc
        if not math.isfinite(vm.loss):
            raise DivergenceError(epoch, vm.loss)
        history.append(EpochRecord(epoch, train_loss, vm.loss, vm.accuracy))
        if vm.loss < best_loss - min_delta:
            best_loss, best_state, best_epoch, waited = vm.loss, model.get_state(), epoch, 0
        else:
            waited += 1
            if waited >= config.patience:
                stopped = True
                break
    model.set_state(best_state)
    log.debug("%s: best epoch %d of %d", config.kind.value, best_epoch, len(history))
    return TrainResult(model, history, best_epoch, stopped)


def fit_model(config: ModelConfig, train: SequenceData, val: SequenceData) -> TrainResult:
    model = build(config, train.input_shape, train.n_exponents)
    return train_loop(model, train, val, config)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class GridCell:
    index: int
    overrides: dict
    config: ModelConfig
    val_accuracy: float = math.nan
    val_loss: float = math.nan
    status: str = "ok"


def grid_cells(base: ModelConfig, grid: dict) -> list:
    """Cartesian product of ``grid`` (keys in sorted order) applied to ``base``."""
    if not grid:
        return [GridCell(0, {}, base)]
    keys = sorted(grid)
    for k in keys:
        if not list(grid[k]):
            raise ParameterError(f"grid axis {k!r} is empty")
    cells = []
    for i, combo in enumerate(itertools.product(*(list(grid[k]) for k in keys))):
        ov = dict(zip(keys, combo))
        try:
            cfg = replace(base, **ov)
        except TypeError as exc:
            raise ParameterError(f"bad grid key: {exc}") from None
        cells.append(GridCell(i, ov, cfg))
    return cells


def grid_search(base: ModelConfig, grid: dict, train: SequenceData, val: SequenceData) -> tuple:
    """Evaluate every cell; a failing cell is recorded, not fatal.

    Best = highest val accuracy, then lowest val loss, then lattice order.
    Returns ``(best_config, leaderboard)`` with the leaderboard in lattice order.
    """
    cells = grid_cells(base, grid)
    for cell in cells:
        try:
            res = fit_model(cell.config, train, val)
            m = evaluate(res.model, val)
            cell.val_accuracy, cell.val_loss = m.accuracy, m.loss
        except VoicepathError as exc:
            cell.status = f"failed: {type(exc).__name__}: {exc}"
            log.warning("grid cell %s failed: %s", cell.overrides, exc)
    ok = [c for c in cells if c.status == "ok"]
    if not ok:
        raise ParameterError("every grid cell failed")
    best = min(ok, key=lambda c: (-c.val_accuracy, c.val_loss, c.index))
    return best.config, cells


def write_leaderboard(path, cells) -> None:
    keys = sorted({k for c in cells for k in c.overrides})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell"] + keys + ["val_accuracy", "val_loss", "status"])
        for c in cells:
            w.writerow([c.index] + [c.overrides.get(k, "") for k in keys]
                       + [repr(c.val_accuracy), repr(c.val_loss), c.status])
