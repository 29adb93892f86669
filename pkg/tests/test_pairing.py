import numpy as np
import pytest

from fsscore.fingerprint import minmax_similarity_matrix, morgan_fingerprint
from fsscore.model import init_model, small_config
from fsscore.pairing import (ClusterConfig, ClusteringError, assemble_pairs, build_catalog, kmeans_tanimoto,
                             labels_from_continuous, load_catalog, mc_delta_samples, pair_with_catalog,
                             rank_by_uncertainty, select_k_silhouette, silhouette_samples)
from fsscore.smiles import canonicalize, parse_smiles
from fsscore.training import PreferencePair
from molgen import random_corpus


def blobs(n_blobs, per_blob, seed=0, width=20):
    """Count vectors on disjoint bit ranges: intra-blob similarity > 0.8, inter-blob 0."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n_blobs * per_blob, n_blobs * width))
    truth = np.repeat(np.arange(n_blobs), per_blob)
    for row, b in enumerate(truth):
        x[row, b * width:(b + 1) * width] = 10 + rng.integers(-1, 2, width)
    order = rng.permutation(len(truth))
    return x[order], truth[order]


def same_partition(a, b):
    return len(set(zip(a.tolist(), b.tolist()))) == len(set(a.tolist())) == len(set(b.tolist()))


@pytest.fixture(scope="module")
def model():
    return init_model(small_config(seed=2))


@pytest.fixture(scope="module")
def mol_pairs():
    mols = list(dict.fromkeys(canonicalize(s) for s in random_corpus(3, 24)))
    return [PreferencePair(a, b) for a, b in zip(mols[::2], mols[1::2])]


class TestKMeans:
    def test_duplicate_groups(self):
        x = np.array([[5, 0, 1]] * 4 + [[0, 3, 0]] * 3, dtype=float)
        res = kmeans_tanimoto(x, 2)
        assert same_partition(res.labels, np.array([0] * 4 + [1] * 3))
        assert res.objective[-1] == pytest.approx(0.0, abs=1e-12)

    def test_k_equals_n(self):
        x, _ = blobs(2, 3)
        assert sorted(kmeans_tanimoto(x, 6).labels.tolist()) == list(range(6))

    def test_recovers_blobs(self):
        x, truth = blobs(3, 10)
        sim = minmax_similarity_matrix(x, x)
        same = truth[:, None] == truth[None, :]
        assert sim[same].min() > 0.8 and sim[~same].max() < 0.1
        assert same_partition(kmeans_tanimoto(x, 3, seed=1).labels, truth)

    def test_objective_non_increasing(self):
        for seed in range(20):
            x = np.random.default_rng(seed).poisson(1.0, (40, 30)).astype(float)
            x[x.sum(axis=1) == 0, 0] = 1
            obj = kmeans_tanimoto(x, 4, seed=seed).objective
            assert all(b <= a + 1e-9 for a, b in zip(obj, obj[1:]))

    def test_no_empty_clusters(self):
        x = np.random.default_rng(1).poisson(0.5, (25, 10)).astype(float)
        for k in range(2, 10):
            assert len(np.unique(kmeans_tanimoto(x, k).labels)) == k

    def test_invalid_k(self):
        with pytest.raises(ClusteringError):
            kmeans_tanimoto(np.ones((3, 2)), 4)
        with pytest.raises(ClusteringError):
            kmeans_tanimoto(np.zeros((0, 2)), 2)

    def test_accepts_fingerprints(self):
        fps = [morgan_fingerprint(parse_smiles(s)) for s in ["CCO", "CCCO", "c1ccccc1", "c1ccccc1C"]]
        res = kmeans_tanimoto(fps, 2)
        assert res.labels.shape == (4,)


class TestSilhouette:
    def test_two_blobs(self):
        x, _ = blobs(2, 8)
        k, scores, _ = select_k_silhouette(x, ClusterConfig(k_min=2, k_max=4))
        assert k == 2 and scores[2] > 0.8

    def test_identical_points(self):
        k, scores, _ = select_k_silhouette(np.ones((10, 4)), ClusterConfig(k_min=2, k_max=4))
        assert k == 2 and set(scores.values()) == {0.0}

    def test_literal_minimum_criterion(self):
        x, _ = blobs(2, 8)
        k, scores, _ = select_k_silhouette(x, ClusterConfig(k_min=2, k_max=4, criterion="min"))
        assert scores[k] == min(scores.values())

    def test_range_bounds(self):
        with pytest.raises(ClusteringError):
            select_k_silhouette(np.ones((5, 2)), ClusterConfig(k_min=2, k_max=5))
        with pytest.raises(ValueError):
            ClusterConfig(k_min=4, k_max=3)

    def test_budget_rule(self):
        assert ClusterConfig.for_budget(600).k_range == range(5, 30)
        assert ClusterConfig.for_budget(300).k_range == range(3, 10)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            pts = rng.normal(size=(n, 2))
            dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
            labels = rng.integers(0, 3, n)
            got = silhouette_samples(dist, labels)
            for i in range(n):
                own = [j for j in range(n) if labels[j] == labels[i] and j != i]
                if not own or len(set(labels.tolist())) < 2:
                    assert got[i] == 0.0
                    continue
                a = np.mean(dist[i, own])
                b = min(np.mean(dist[i, labels == c]) for c in set(labels.tolist()) if c != labels[i])
                assert got[i] == pytest.approx((b - a) / max(a, b))
            assert np.all((got >= -1) & (got <= 1))


class TestAssemble:
    def test_labelled_example(self):
        pairs = assemble_pairs(["A", "B", "C", "D"], [0, 0, 1, 1], [1, 1, 0, 0])
        assert len(pairs) == 2
        for p in pairs:
            assert {p.smiles_i, p.smiles_j} & {"A", "B"} and {p.smiles_i, p.smiles_j} & {"C", "D"}
            assert p.target == int(p.smiles_i in ("A", "B"))

    def test_single_cluster(self):
        assert assemble_pairs(["A", "B", "C"], [0, 0, 0]) == []

    def test_unique_constraints_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            mols = [f"M{k}" for k in range(n)]
            clusters = rng.integers(0, int(rng.integers(1, 5)), n)
            labels = rng.integers(0, 2, n) if rng.random() < 0.5 else None
            pairs = assemble_pairs(mols, clusters, labels, seed=int(rng.integers(1000)))
            used = [s for p in pairs for s in (p.smiles_i, p.smiles_j)]
            assert len(used) == len(set(used)) and len(pairs) <= n // 2
            for p in pairs:
                i, j = int(p.smiles_i[1:]), int(p.smiles_j[1:])
                assert clusters[i] != clusters[j]
                if labels is not None:
                    assert labels[i] != labels[j] and p.target == labels[i]

    def test_overlapping_never_repeats(self):
        mols = [f"M{k}" for k in range(12)]
        clusters = np.arange(12) % 3
        pairs = assemble_pairs(mols, clusters, mode="overlapping")
        keys = [frozenset((p.smiles_i, p.smiles_j)) for p in pairs]
        assert len(keys) == len(set(keys)) and len(pairs) > 6

    def test_max_pairs_and_seed(self):
        mols = [f"M{k}" for k in range(20)]
        clusters = np.arange(20) % 2
        assert len(assemble_pairs(mols, clusters, max_pairs=3)) == 3
        assert assemble_pairs(mols, clusters, seed=4) == assemble_pairs(mols, clusters, seed=4)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            assemble_pairs(["A"], [0, 1])
        with pytest.raises(ValueError):
            assemble_pairs(["A", "B"], [0, 1], mode="all")


class TestUncertainty:
    def test_rate_zero_gives_zero_variance(self, model, mol_pairs):
        ranked = rank_by_uncertainty(model, mol_pairs, n_samples=10, rate=0.0)
        assert all(r.variance == 0.0 for r in ranked)

    def test_ranking(self, model, mol_pairs):
        ranked = rank_by_uncertainty(model, mol_pairs, n_samples=50, rate=0.2, seed=3)
        var = [r.variance for r in ranked]
        assert max(var) > 0 and var == sorted(var, reverse=True)
        assert sorted(map(id, (r.pair for r in ranked))) == sorted(map(id, mol_pairs))
        again = rank_by_uncertainty(model, mol_pairs, n_samples=50, rate=0.2, seed=3)
        assert [(r.pair, r.variance) for r in again] == [(r.pair, r.variance) for r in ranked]

    def test_samples_shape(self, model, mol_pairs):
        assert mc_delta_samples(model, mol_pairs, 7).shape == (7, len(mol_pairs))

    def test_needs_two_samples(self, model, mol_pairs):
        with pytest.raises(ValueError):
            rank_by_uncertainty(model, mol_pairs, n_samples=1)
        assert rank_by_uncertainty(model, [], n_samples=2) == []


class TestContinuousLabels:
    @pytest.mark.parametrize("vi,vj,expected", [(1.0, 4.0, 1), (4.0, 1.0, 0), (2.0, 3.0, None), (3.0, 3.0, None),
                                                (1.0, 3.0, 1)])
    def test_threshold(self, vi, vj, expected):
        assert labels_from_continuous([vi, vj], [(0, 1)]) == [expected]


class TestCatalog:
    CATALOG = ["CCO", "c1ccccc1", "CC(=O)O", "CCN", "C1CCCCC1"]

    def test_exact_match_dropped(self):
        assert pair_with_catalog(["OCC"], build_catalog(self.CATALOG)) == []

    def test_nearest_neighbour(self):
        (pair,) = pair_with_catalog(["c1ccccc1O"], build_catalog(self.CATALOG))
        assert pair.smiles_i == "c1ccccc1" and pair.smiles_j == "c1ccccc1O" and pair.target == 1

    def test_matches_brute_force(self):
        catalog = build_catalog(self.CATALOG)
        queries = ["CCCO", "CC(=O)OC", "C1CCCCC1N"]
        fps = [morgan_fingerprint(parse_smiles(s)) for s in self.CATALOG]
        for q, pair in zip(queries, pair_with_catalog(queries, catalog)):
            qfp = morgan_fingerprint(parse_smiles(q))
            sims = [sum(min(qfp.data.get(b, 0), f.data.get(b, 0)) for b in set(qfp.data) | set(f.data))
                    / sum(max(qfp.data.get(b, 0), f.data.get(b, 0)) for b in set(qfp.data) | set(f.data))
                    for f in fps]
            assert pair.smiles_i == self.CATALOG[int(np.argmax(sims))]

    def test_load(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("smiles\nCCO\nCCN\n")
        assert load_catalog(path).smiles == ["CCO", "CCN"]
        bad = tmp_path / "bad.csv"
        bad.write_text("name\nx\n")
        with pytest.raises(ValueError):
            load_catalog(bad)

