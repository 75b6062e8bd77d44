import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhpo.data import (
    DataShard,
    SyntheticSpec,
    apply_domain_shift,
    generate,
    label_histogram,
    load_csv,
    mean_label_tv,
    partition_dirichlet,
    partition_sizes,
    split,
)
from fedhpo.fl import LocalTrainConfig, evaluate, local_train
from fedhpo.models import SmallModel


def _index_sets(parts, dataset):
    # rows are unique Gaussian draws, so a row's bytes identify it
    lookup = {row.tobytes(): i for i, row in enumerate(dataset.features)}
    return [{lookup[row.tobytes()] for row in p.features} for p in parts]


class TestGenerate:
    def test_tight_clusters_are_linearly_separable(self):
        ds = generate(SyntheticSpec(n_samples=1000, d_in=8, classes=5, cluster_spread=0.01, seed=1))
        model = SmallModel("softmax-regression", 8, 5)
        theta, _ = local_train(model, np.zeros(model.n_params), ds, LocalTrainConfig(0.5, 500, 100),
                               np.random.default_rng(0))
        assert evaluate(model, theta, ds)[1] >= 0.99

    def test_same_seed_same_data(self):
        a, b = generate(SyntheticSpec(seed=4)), generate(SyntheticSpec(seed=4))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_class_balance(self):
        ds = generate(SyntheticSpec(n_samples=100_000, classes=10, seed=0))
        np.testing.assert_allclose(label_histogram(ds.labels, 10), 0.1, atol=0.01)

    def test_more_classes_than_features(self):
        ds = generate(SyntheticSpec(n_samples=200, d_in=2, classes=6, seed=0))
        assert ds.features.shape == (200, 2) and set(ds.labels) == set(range(6))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="n_samples"):
            SyntheticSpec(n_samples=10, classes=10).validate(n_clients=2)


@pytest.fixture(scope="module")
def dataset():
    return generate(SyntheticSpec(n_samples=3000, classes=10, seed=0))


class TestPartition:
    def test_large_alpha_is_near_iid(self, dataset):
        parts = partition_dirichlet(dataset, 4, 1e6, seed=0)
        pooled = label_histogram(dataset.labels, 10)
        for p in parts:
            np.testing.assert_allclose(label_histogram(p.labels, 10), pooled, atol=0.05)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 8), st.floats(0.01, 100), st.integers(0, 1000))
    def test_exhaustive_and_disjoint(self, dataset, k, alpha, seed):
        parts = partition_dirichlet(dataset, k, alpha, seed)
        sets = _index_sets(parts, dataset)
        assert sum(len(s) for s in sets) == len(dataset)
        assert set().union(*sets) == set(range(len(dataset)))

    def test_sparse_alpha_drops_classes(self, dataset):
        missing = []
        for seed in range(5):
            parts = partition_dirichlet(dataset, 8, 0.01, seed)
            missing.append(max(10 - len(np.unique(p.labels)) for p in parts))
        assert max(missing) >= 3

    def test_heterogeneity_decreases_with_alpha(self, dataset):
        tv = [np.mean([mean_label_tv(partition_dirichlet(dataset, 8, a, s), 10) for s in range(20)])
              for a in (0.05, 0.5, 5, 500)]
        assert all(x >= y for x, y in zip(tv, tv[1:]))

    def test_min_size_repair(self, dataset):
        parts = partition_dirichlet(dataset, 8, 0.01, seed=3, min_size=20)
        assert min(len(p) for p in parts) >= 20

    def test_deterministic(self, dataset):
        a = partition_dirichlet(dataset, 5, 0.3, seed=2)
        b = partition_dirichlet(dataset, 5, 0.3, seed=2)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.labels, pb.labels)

    def test_size_fractions(self, dataset):
        parts = partition_sizes(dataset, [0.71, 0.093, 0.197], seed=0)
        assert [len(p) for p in parts] == [2130, 279, 591]

    def test_invalid_alpha(self, dataset):
        with pytest.raises(ValueError, match="alpha"):
            partition_dirichlet(dataset, 3, 0.0, seed=0)


class TestSplit:
    def test_sizes(self):
        ds = generate(SyntheticSpec(n_samples=100, classes=2, seed=0))
        parts = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert [len(p) for p in parts] == [80, 10, 10]
        assert [p.role for p in parts] == ["train", "val", "test"]
        assert sorted(np.concatenate([p.labels for p in parts])) == sorted(ds.labels)

    def test_union_is_original(self):
        ds = generate(SyntheticSpec(n_samples=97, classes=3, seed=1))
        parts = split(ds, (0.6, 0.2, 0.2), seed=5)
        assert sum(len(s) for s in _index_sets(parts, ds)) == 97
        assert set().union(*_index_sets(parts, ds)) == set(range(97))

    def test_too_small_rejected(self):
        ds = generate(SyntheticSpec(n_samples=5, classes=2, seed=0))
        with pytest.raises(ValueError, match="empty"):
            split(ds, (0.8, 0.1, 0.1))


class TestDomainShift:
    def test_offset_norm(self, rng):
        shards = [DataShard(np.zeros((3, 6)), [0, 1, 0]) for _ in range(4)]
        offsets = apply_domain_shift(shards, 2.5, rng)
        np.testing.assert_allclose([np.linalg.norm(o) for o in offsets], 2.5)

    def test_zero_magnitude(self, rng):
        offsets = apply_domain_shift([DataShard(np.zeros((2, 3)), [0, 1])], 0.0, rng)
        np.testing.assert_array_equal(offsets[0], 0.0)


class TestCsv:
    def test_load(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,label,b\n0.5,1,2.0\n-1.0,0,3.5\n")
        ds = load_csv(path)
        np.testing.assert_array_equal(ds.features, [[0.5, 2.0], [-1.0, 3.5]])
        np.testing.assert_array_equal(ds.labels, [1, 0])

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="label"):
            load_csv(path)
