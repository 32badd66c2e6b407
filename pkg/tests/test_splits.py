import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iceberg.graph import SparseGraph
from iceberg.splits import (
    SplitError,
    load_split,
    make_fewshot,
    make_step_imbalance,
    save_split,
    unlabeled_class_distribution,
)

CORA_CLASS_SIZES = [351, 217, 418, 818, 426, 298, 180]
PUBMED_CLASS_SIZES = [4103, 7739, 7875]


def labels_only_graph(class_sizes, seed=0):
    """Edgeless graph carrying only a label vector of the given class sizes."""
    labels = np.random.default_rng(seed).permutation(np.repeat(np.arange(len(class_sizes)), class_sizes))
    return SparseGraph.from_edges(len(labels), np.zeros((0, 2)), np.ones((len(labels), 1)), labels, len(class_sizes))


@pytest.fixture(scope="module")
def cora_shaped():
    return labels_only_graph(CORA_CLASS_SIZES)


def assert_disjoint(masks, n):
    seen = np.zeros(n, dtype=int)
    for idx in (masks.train_idx, masks.val_idx, masks.test_idx):
        seen[idx] += 1
    assert seen.max() <= 1


class TestStepImbalance:
    def test_cora_ratio_10(self, cora_shaped):
        m = make_step_imbalance(cora_shaped, 20, 10, 30, seed=0)
        assert m.labeled_counts.tolist() == [20, 20, 20, 20, 2, 2, 2]
        assert m.imbalance_ratio == 10

    def test_ratio_one_is_balanced(self, cora_shaped):
        m = make_step_imbalance(cora_shaped, 20, 1, 30, seed=0)
        assert m.labeled_counts.tolist() == [20] * 7

    def test_six_classes_ratio_20(self):
        g = labels_only_graph([100] * 6)
        m = make_step_imbalance(g, 20, 20, 30, seed=4)
        assert m.labeled_counts.tolist() == [20, 20, 20, 1, 1, 1]
        assert np.bincount(g.labels[m.train_idx], minlength=6).tolist() == [20, 20, 20, 1, 1, 1]

    def test_ratio_too_large(self, cora_shaped):
        with pytest.raises(SplitError, match="imbalance ratio too large"):
            make_step_imbalance(cora_shaped, 20, 21, 30, seed=0)

    def test_insufficient_nodes(self):
        g = labels_only_graph([10, 100])
        with pytest.raises(SplitError, match="insufficient nodes"):
            make_step_imbalance(g, 20, 2, 30, seed=0)

    def test_removed_nodes_become_test_nodes(self, cora_shaped):
        m = make_step_imbalance(cora_shaped, 20, 10, 30, seed=1)
        assert m.train_idx.size + m.val_idx.size + m.test_idx.size == cora_shaped.num_nodes
        assert np.bincount(cora_shaped.labels[m.val_idx]).tolist() == [30] * 7

    def test_minority_train_nodes_come_from_balanced_base(self, cora_shaped):
        base = make_step_imbalance(cora_shaped, 20, 1, 30, seed=5)
        imb = make_step_imbalance(cora_shaped, 20, 10, 30, seed=5)
        assert set(imb.train_idx) <= set(base.train_idx)
        assert np.array_equal(base.val_idx, imb.val_idx)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 4, 5, 10, 20]))
    def test_ratio_exact_when_divisible(self, seed, ratio):
        g = labels_only_graph([60, 70, 80, 90, 100])
        m = make_step_imbalance(g, 20, ratio, 10, seed)
        assert m.imbalance_ratio == ratio
        assert_disjoint(m, g.num_nodes)
        assert np.array_equal(m.labeled_counts, np.bincount(g.labels[m.train_idx], minlength=5))


class TestFewShot:
    def test_one_label_per_class(self, cora_shaped):
        m = make_fewshot(cora_shaped, 1, 30, seed=0)
        assert m.train_idx.size == 7
        assert m.labeled_counts.tolist() == [1] * 7
        assert m.imbalance_ratio == 1

    def test_pubmed_set_sizes(self):
        g = labels_only_graph(PUBMED_CLASS_SIZES)
        m = make_fewshot(g, 5, 30, seed=0)
        assert (m.train_idx.size, m.val_idx.size, m.test_idx.size) == (15, 90, 19612)

    def test_different_seeds_same_counts(self, cora_shaped):
        a = make_fewshot(cora_shaped, 3, 30, seed=0)
        b = make_fewshot(cora_shaped, 3, 30, seed=1)
        assert not np.array_equal(a.train_idx, b.train_idx)
        assert np.array_equal(a.labeled_counts, b.labeled_counts)

    def test_insufficient(self):
        with pytest.raises(SplitError, match="insufficient"):
            make_fewshot(labels_only_graph([5, 50]), 3, 3, seed=0)


class TestDeterminismAndSerialization:
    @pytest.mark.parametrize("maker", [
        lambda g, s: make_step_imbalance(g, 20, 10, 30, s),
        lambda g, s: make_fewshot(g, 2, 30, s),
    ])
    def test_same_seed_same_masks(self, cora_shaped, maker):
        a, b = maker(cora_shaped, 9), maker(cora_shaped, 9)
        for name in ("train_idx", "val_idx", "test_idx"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert_disjoint(a, cora_shaped.num_nodes)

    def test_json_round_trip_byte_identical(self, cora_shaped, tmp_path):
        m = make_step_imbalance(cora_shaped, 20, 10, 30, seed=3)
        path = save_split(m, tmp_path / "split.json")
        first = path.read_bytes()
        again = save_split(load_split(path, cora_shaped), tmp_path / "split2.json").read_bytes()
        assert first == again
        assert load_split(path, cora_shaped).params == m.params

    def test_load_rejects_overlap(self, cora_shaped, tmp_path):
        (tmp_path / "bad.json").write_text('{"train": [0, 1], "val": [1], "test": [2]}')
        with pytest.raises(SplitError, match="overlap"):
            load_split(tmp_path / "bad.json", cora_shaped)


class TestUnlabeledDistribution:
    def test_all_labeled_gives_zero(self):
        g = labels_only_graph([3, 3])
        m = make_fewshot(g, 3, 0, seed=0)
        assert unlabeled_class_distribution(g, m).tolist() == [0, 0]

    def test_balanced_sbm_near_uniform(self):
        g = labels_only_graph([100] * 4)
        m = make_step_imbalance(g, 20, 1, 30, seed=0)
        assert unlabeled_class_distribution(g, m).tolist() == [80] * 4

    def test_cora_minority_mismatch(self, cora_shaped):
        m = make_step_imbalance(cora_shaped, 20, 10, 30, seed=0)
        unlabeled = unlabeled_class_distribution(cora_shaped, m)
        assert unlabeled.tolist() == [s - n for s, n in zip(CORA_CLASS_SIZES, m.labeled_counts)]
        assert np.all(unlabeled[4:] >= 50 * m.labeled_counts[4:])
