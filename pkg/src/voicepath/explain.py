"""Permutation importance over feature columns and feature families."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .augment import derive_seed
from .errors import DegenerateInputError, ParameterError
from .models import SequenceData

FAMILIES = ("mel", "mfcc", "chroma", "exponents")


@dataclass(frozen=True)
class Importance:
    feature: str
    rank: int
    mean: float
    sd: float


def _accuracy(model, data: SequenceData, X) -> float:
    view = SequenceData(X, data.mask, data.y, data.feature_names, data.n_exponents, data.ids)
    return float(np.mean((model.predict_proba(view) >= 0.5).astype(int) == data.y))


def importance_by_groups(model, data: SequenceData, groups: dict, n_repeats: int = 5, seed: int = 0) -> list:
    """Accuracy drop when each group's columns are permuted across clips.

    Whole clips are swapped: every frame of clip ``i`` receives clip
    ``perm[i]``'s values for the group's columns. Repeat ``r`` of group
    ``g`` uses its own sub-seed, so results do not depend on evaluation order.
    Output is sorted by mean importance, descending (stable on ties).
    """
    if n_repeats < 3:
        raise ParameterError("n_repeats must be >= 3")
    if len(data) < 2:
        raise DegenerateInputError("permutation importance needs at least 2 test clips")
    if not groups:
        raise ParameterError("no feature groups given")
    base = _accuracy(model, data, data.X)
    rows = []
    for name, cols in groups.items():
        cols = np.asarray(cols, dtype=int)
        drops = []
        for r in range(n_repeats):
            rng = np.random.default_rng(derive_seed(seed, "perm", name, r))
            perm = rng.permutation(len(data))
            X = data.X.copy()
            X[:, :, cols] = data.X[perm][:, :, cols]
            drops.append(base - _accuracy(model, data, X))
        rows.append((name, float(np.mean(drops)), float(np.std(drops, ddof=1))))
    order = sorted(range(len(rows)), key=lambda i: (-rows[i][1], i))
    return [Importance(rows[i][0], k + 1, rows[i][1], rows[i][2]) for k, i in enumerate(order)]


def permutation_importance(model, data: SequenceData, feature_names=None, n_repeats: int = 5,
                           seed: int = 0) -> list:
    """Per-column importance, ranked."""
    names = list(feature_names or data.feature_names)
    if len(names) != data.X.shape[2]:
        raise ParameterError(f"{len(names)} feature names for {data.X.shape[2]} columns")
    return importance_by_groups(model, data, {n: [i] for i, n in enumerate(names)}, n_repeats, seed)


def family_of(name: str) -> str:
    prefix = name.split("_", 1)[0]
    return prefix if prefix in ("mel", "mfcc", "chroma") else "exponents"


def family_groups(feature_names) -> dict:
    groups = {}
    for i, n in enumerate(feature_names):
        groups.setdefault(family_of(n), []).append(i)
    return groups


def grouped_importance(model, data: SequenceData, feature_names=None, n_repeats: int = 5, seed: int = 0) -> list:
    """Importance of whole feature families (mel, mfcc, chroma, exponents)."""
    return importance_by_groups(model, data, family_groups(feature_names or data.feature_names), n_repeats, seed)


def write_importance_csv(path, rows, provenance: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "rank", "importance_mean", "importance_sd"])
        for r in rows:
            w.writerow([r.feature, r.rank, repr(r.mean), repr(r.sd)])


def read_importance_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [Importance(r["feature"], int(r["rank"]), float(r["importance_mean"]), float(r["importance_sd"]))
            for r in rows]
