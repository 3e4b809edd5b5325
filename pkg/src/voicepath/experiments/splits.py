"""Stratified train/val/test splitting and stratified k-fold indices."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, StratificationError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.7, 0.15, 0.15)
    seed: int = 0
    stratify: bool = True
    group_by_speaker: bool = True

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if len(r) != 3 or min(r) <= 0:
            raise ParameterError(f"ratios must be three positive numbers, got {r}")
        if abs(sum(r) - 1.0) > 1e-9:
            raise ParameterError(f"ratios must sum to 1, got {sum(r)}")


def _targets(n: int, ratios) -> list:
    val = int(round(n * ratios[1]))
    test = int(round(n * ratios[2]))
    return [n - val - test, val, test]


def split_indices(labels, spec: SplitSpec, groups=None, augmented=None) -> tuple:
    """Index arrays ``(train, val, test)``.

    Groups (speakers) are assigned whole, largest first, to whichever split of
    their majority class is furthest below its target count, relative to that
    target. Augmented
    samples always go to train together with the rest of their group.
    """
    labels = np.asarray(labels)
    n = labels.size
    aug = np.zeros(n, bool) if augmented is None else np.asarray(augmented, bool)
    if groups is None or not spec.group_by_speaker:
        groups = [f"#{i}" for i in range(n)]
    groups = list(groups)
    if len(groups) != n or aug.size != n:
        raise ParameterError("labels, groups and augmented must have equal length")

    members = defaultdict(list)
    for i, g in enumerate(groups):
        members[g].append(i)
    forced_train = {g for g, idx in members.items() if aug[idx].any()}

    counts = Counter(labels[~aug].tolist())
    for c, k in counts.items():
        if k < 2:
            raise StratificationError(f"class {c} has {k} sample(s); need >= 2")

    strata = defaultdict(list)
    for g in sorted(members):
        if g in forced_train:
            continue
        labs = Counter(labels[members[g]].tolist())
        top = max(labs.values())
        cls = min(c for c, v in labs.items() if v == top) if spec.stratify else 0
        strata[cls].append(g)

    rng = np.random.default_rng(spec.seed)
    assign = {g: 0 for g in forced_train}
    for cls in sorted(strata):
        glist = strata[cls]
        order = rng.permutation(len(glist))
        glist = [glist[i] for i in order]
        glist.sort(key=lambda g: -len(members[g]))  # stable: random within equal size
        total = sum(len(members[g]) for g in glist)
        forced = sum(len(members[g]) for g in forced_train
                     if not spec.stratify or Counter(labels[members[g]].tolist()).most_common(1)[0][0] == cls)
        tgt = _targets(total + forced, spec.ratios)
        have = [forced, 0, 0]
        for g in glist:
            # relative deficit so small val/test targets are not starved by train
            deficit = [(tgt[s] - have[s]) / max(tgt[s], 1) for s in range(3)]
            s = int(np.argmax(deficit))
            assign[g] = s
            have[s] += len(members[g])
        if have[1] == 0 or have[2] == 0:
            raise StratificationError(
                f"class {cls}: cannot populate val and test (counts {have}, targets {tgt})")

    out = [[], [], []]
    for g, s in assign.items():
        out[s].extend(members[g])
    return tuple(np.array(sorted(x), dtype=int) for x in out)


def stratified_split(samples, spec: SplitSpec) -> tuple:
    """Split labelled samples (objects with ``label``, ``speaker_id``,
    ``augmented``) into train/val/test lists."""
    samples = list(samples)
    labels = [s.label for s in samples]
    groups = [s.speaker_id for s in samples]
    aug = [bool(getattr(s, "augmented", False)) for s in samples]
    idx = split_indices(labels, spec, groups, aug)
    return tuple([samples[i] for i in part] for part in idx)


def kfold_indices(n: int, k: int, labels, seed: int = 0) -> list:
    """``k`` disjoint validation folds covering ``0..n-1``.

    Each class is shuffled and dealt round-robin, continuing the deal across
    classes so fold sizes differ by at most one.
    """
    labels = np.asarray(labels)
    if labels.size != n:
        raise ParameterError("labels must have length n")
    if k < 2:
        raise ParameterError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise StratificationError(f"class {c} has {idx.size} members, fewer than k={k}")
        for i in idx[rng.permutation(idx.size)]:
            folds[pos % k].append(int(i))
            pos += 1
    return [np.array(sorted(f), dtype=int) for f in folds]
