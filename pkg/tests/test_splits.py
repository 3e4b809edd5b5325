from collections import Counter, namedtuple

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voicepath.errors import ParameterError, StratificationError
from voicepath.experiments.splits import SplitSpec, kfold_indices, split_indices, stratified_split

Item = namedtuple("Item", "label speaker_id augmented")

RATIOS = (0.7, 0.15, 0.15)


def per_class(labels, idx):
    c = Counter(np.asarray(labels)[idx].tolist())
    return c[0], c[1]


@st.composite
def corpora(draw, grouped=False):
    n0 = draw(st.integers(7, 80))
    n1 = draw(st.integers(7, 80))
    labels = [0] * n0 + [1] * n1
    order = draw(st.permutations(range(n0 + n1)))
    labels = [labels[i] for i in order]
    if not grouped:
        return labels, None
    size = draw(st.integers(1, 3))
    groups = [f"{lab}-{i // size}" for i, lab in enumerate(sorted(labels))]
    # regroup back into the shuffled order
    sorted_pos = sorted(range(len(labels)), key=lambda i: (labels[i], i))
    g = [None] * len(labels)
    for rank, i in enumerate(sorted_pos):
        g[i] = groups[rank]
    return labels, g


class TestStratifiedSplit:
    def test_hundred_sample_example(self):
        labels = [0] * 60 + [1] * 40
        tr, va, te = split_indices(labels, SplitSpec(RATIOS, seed=3))
        assert (len(tr), len(va), len(te)) == (70, 15, 15)
        assert per_class(labels, tr) == (42, 28)
        assert per_class(labels, va) == (9, 6)
        assert per_class(labels, te) == (9, 6)

    def test_deterministic(self):
        labels = [0] * 30 + [1] * 25
        a = split_indices(labels, SplitSpec(seed=9))
        b = split_indices(labels, SplitSpec(seed=9))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = split_indices(labels, SplitSpec(seed=10))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_dominant_speaker_kept_whole(self):
        labels = [0] * 60 + [1] * 40
        groups = ["big"] * 40 + [f"s{i}" for i in range(60)]
        parts = split_indices(labels, SplitSpec(seed=1), groups)
        holders = [p for p in parts if np.isin(np.arange(40), p).any()]
        assert len(holders) == 1 and np.isin(np.arange(40), holders[0]).all()

    def test_augmented_only_in_train(self):
        items = [Item(i % 2, f"s{i}", False) for i in range(40)]
        items += [Item(1, f"s{i}", True) for i in range(1, 40, 2)]
        tr, va, te = stratified_split(items, SplitSpec(seed=0, group_by_speaker=False))
        assert not any(x.augmented for x in va + te)
        assert sum(x.augmented for x in tr) == 20

    def test_augmented_pulls_its_speaker_into_train(self):
        items = [Item(i % 2, f"s{i}", False) for i in range(40)] + [Item(1, "s1", True)]
        tr, va, te = stratified_split(items, SplitSpec(seed=0))
        assert "s1" in {x.speaker_id for x in tr}
        assert "s1" not in {x.speaker_id for x in va + te}

    def test_too_small(self):
        with pytest.raises(StratificationError):
            split_indices([0, 0, 0, 1], SplitSpec())
        with pytest.raises(StratificationError):
            split_indices([0, 1, 0, 1], SplitSpec())

    def test_bad_ratios(self):
        with pytest.raises(ParameterError):
            SplitSpec((0.5, 0.5, 0.1))
        with pytest.raises(ParameterError):
            SplitSpec((1.0, 0.0, 0.0))

    @settings(max_examples=100)
    @given(corpora(), st.integers(0, 2**31))
    def test_partition_and_proportions(self, corpus, seed):
        labels, _ = corpus
        parts = split_indices(labels, SplitSpec(RATIOS, seed=seed, group_by_speaker=False))
        joined = np.concatenate(parts)
        assert joined.size == len(labels) and np.array_equal(np.sort(joined), np.arange(len(labels)))
        for cls in (0, 1):
            n = labels.count(cls)
            for p, r in zip(parts, RATIOS):
                got = int(np.sum(np.asarray(labels)[p] == cls))
                assert abs(got - n * r) <= 1

    @settings(max_examples=100)
    @given(corpora(grouped=True), st.integers(0, 2**31))
    def test_speaker_grouping(self, corpus, seed):
        labels, groups = corpus
        parts = split_indices(labels, SplitSpec(RATIOS, seed=seed), groups)
        joined = np.concatenate(parts)
        assert np.array_equal(np.sort(joined), np.arange(len(labels)))
        where = {}
        for s, p in enumerate(parts):
            for i in p:
                assert where.setdefault(groups[i], s) == s


class TestKFold:
    def test_ten_by_five(self):
        labels = [0, 1] * 5
        folds = kfold_indices(10, 5, labels, seed=0)
        assert [len(f) for f in folds] == [2] * 5
        for f in folds:
            assert sorted(np.asarray(labels)[f].tolist()) == [0, 1]

    def test_deterministic(self):
        labels = [0] * 12 + [1] * 9
        a, b = kfold_indices(21, 3, labels, seed=4), kfold_indices(21, 3, labels, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @settings(max_examples=100)
    @given(st.data())
    def test_partition_and_balance(self, data):
        k = data.draw(st.integers(2, 8))
        n0, n1 = data.draw(st.integers(k, 60)), data.draw(st.integers(k, 60))
        labels = np.array(data.draw(st.permutations([0] * n0 + [1] * n1)))
        folds = kfold_indices(labels.size, k, labels, seed=data.draw(st.integers(0, 999)))
        joined = np.concatenate(folds)
        assert np.array_equal(np.sort(joined), np.arange(labels.size))
        for cls, n in ((0, n0), (1, n1)):
            for f in folds:
                assert abs(np.sum(labels[f] == cls) - n / k) <= 1
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_errors(self):
        with pytest.raises(StratificationError):
            kfold_indices(6, 4, [0, 0, 0, 1, 1, 1])
        with pytest.raises(ParameterError):
            kfold_indices(4, 1, [0, 0, 1, 1])
        with pytest.raises(ParameterError):
            kfold_indices(5, 2, [0, 0, 1, 1])
