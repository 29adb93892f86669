import csv
import graphlib
import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from fsscore.datapipe import (REJECT_REASONS, CorpusError, ReactionPair, build_corpus, disjoint_split,
                              filter_rows, load_and_filter, make_chirality_pairs, prune_network, read_pairs_csv,
                              remove_cycles_dfs, write_pairs_csv)
from fsscore.smiles import canonicalize
from fsscore.training import PreferencePair

FIXTURE = Path(__file__).parent / "data" / "filter_fixture.tsv"


def fixture_expectations():
    with FIXTURE.open(newline="") as fh:
        return [row["expect"].split(";") for row in csv.DictReader(fh, delimiter="\t")]


def is_acyclic(edges) -> bool:
    graph: dict[str, set[str]] = {}
    for a, b in edges:
        graph.setdefault(b, set()).add(a)
        graph.setdefault(a, set())
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError:
        return False
    return True


def random_digraph(rng, n, p):
    nodes = [f"n{k:02d}" for k in range(n)]
    return [(a, b) for a in nodes for b in nodes if rng.random() < p]


class TestFilter:
    def test_fixture(self):
        expected = fixture_expectations()
        assert len(expected) == 20
        pairs, report = load_and_filter(FIXTURE)
        outcomes = Counter(x for row in expected for x in row)
        assert report.rows == 20
        assert report.kept == len(pairs) == outcomes["kept"]
        for reason in REJECT_REASONS:
            assert report.rejected[reason] == outcomes[reason], reason

    def test_kept_pairs_are_canonical(self):
        pairs, _ = load_and_filter(FIXTURE)
        for p in pairs:
            assert p.reactant == canonicalize(p.reactant) and p.product == canonicalize(p.product)
        assert ReactionPair(canonicalize("CCCCO"), canonicalize("CCCCOC(C)=O")) == pairs[0]

    def test_idempotent(self):
        pairs, _ = load_and_filter(FIXTURE)
        again, report = filter_rows((p.reactant, p.product) for p in pairs)
        assert again == pairs and sum(report.rejected.values()) == 0

    def test_dedup_keeps_first(self):
        pairs, report = filter_rows([("CCCCO", "CCCCN"), ("OCCCC", "NCCCC"), ("CCCCO", "CCCCN")])
        assert len(pairs) == 1 and report.rejected["duplicate"] == 2

    def test_report_dict_lists_every_reason(self):
        _, report = filter_rows([])
        assert set(report.to_dict()["rejected"]) == set(REJECT_REASONS)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\nCCCC,CCCCO\n")
        with pytest.raises(CorpusError, match="missing column"):
            load_and_filter(path)

    def test_unreadable(self, tmp_path):
        with pytest.raises(CorpusError):
            load_and_filter(tmp_path / "absent.csv")

    def test_comma_file(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("reactant,product\nCCCCO,CCCCOC\n")
        assert len(load_and_filter(path)[0]) == 1


class TestCycles:
    def test_self_loop(self):
        kept, removed = remove_cycles_dfs([("A", "A"), ("A", "B")])
        assert removed == [("A", "A")] and kept == [("A", "B")]

    def test_triangle(self):
        kept, removed = remove_cycles_dfs([("A", "B"), ("B", "C"), ("C", "A")])
        assert removed == [("C", "A")] and is_acyclic(kept)

    def test_dag_untouched(self):
        edges = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]
        assert remove_cycles_dfs(edges) == (edges, [])

    def test_random_digraphs(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            edges = random_digraph(rng, int(rng.integers(2, 51)), 0.1)
            kept, removed = remove_cycles_dfs(edges)
            assert is_acyclic(kept)
            assert sorted(kept + removed) == sorted(set(edges))

    def test_deterministic_under_input_order(self):
        rng = np.random.default_rng(1)
        edges = random_digraph(rng, 20, 0.15)
        shuffled = [edges[k] for k in rng.permutation(len(edges))]
        assert set(remove_cycles_dfs(edges)[1]) == set(remove_cycles_dfs(shuffled)[1])

    def test_prune_network(self):
        pairs = [ReactionPair("A", "B"), ReactionPair("B", "A")]
        kept, removed = prune_network(pairs)
        assert kept == [ReactionPair("A", "B")] and removed == [ReactionPair("B", "A")]


class TestSplit:
    def test_shared_member_same_side(self):
        pairs = [ReactionPair("A", "B"), ReactionPair("B", "C"), ReactionPair("D", "E")]
        res = disjoint_split(pairs, 0.5)
        sides = {p: p in res.test for p in pairs}
        assert sides[pairs[0]] == sides[pairs[1]]

    def test_disjoint_pairs_fraction(self):
        pairs = [ReactionPair(f"R{k}", f"P{k}") for k in range(10)]
        res = disjoint_split(pairs, 0.5)
        assert res.achieved_fraction == 0.5

    def test_random_corpus_disjoint(self):
        rng = np.random.default_rng(2)
        pairs = []
        while len(pairs) < 1000:
            a, b = rng.integers(0, 1500, 2)
            if a != b:
                pairs.append(ReactionPair(f"M{a}", f"M{b}"))
        res = disjoint_split(pairs, 0.2)
        train = {m for p in res.train for m in (p.reactant, p.product)}
        test = {m for p in res.test for m in (p.reactant, p.product)}
        assert not train & test
        assert len(res.train) + len(res.test) == 1000

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            disjoint_split([], 1.0)


class TestChirality:
    def test_example(self):
        (pair,) = make_chirality_pairs(["C[C@@H](N)O"], n=1)
        assert pair.smiles_i == canonicalize("CC(N)O") and pair.smiles_j == canonicalize("C[C@@H](N)O")
        assert pair.target == 1

    def test_achiral_corpus(self):
        with pytest.raises(CorpusError):
            make_chirality_pairs(["CCO", "c1ccccc1"], n=1)

    def test_sample_size_and_seed(self):
        corpus = [f"C[C@@H](N){'C' * k}O" for k in range(1, 30)]
        a = make_chirality_pairs(corpus, n=10, seed=3)
        assert len(a) == 10 and a == make_chirality_pairs(corpus, n=10, seed=3)


class TestCorpusFiles:
    def test_pairs_round_trip(self, tmp_path):
        pairs = [PreferencePair("CCO", "CCN", 1), PreferencePair("CCC", "CCCl")]
        write_pairs_csv(pairs, tmp_path / "p.csv")
        assert read_pairs_csv(tmp_path / "p.csv") == pairs

    def test_build_corpus(self, tmp_path):
        summary = build_corpus(FIXTURE, tmp_path / "out", test_fraction=0.3)
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        train = read_pairs_csv(tmp_path / "out" / "train.csv")
        test = read_pairs_csv(tmp_path / "out" / "test.csv")
        assert report["train"] == len(train) == summary["train"] and len(test) == summary["test"]
        assert all(p.target == 1 for p in train + test)
        assert not {s for p in train for s in (p.smiles_i, p.smiles_j)} & {s for p in test for s in (p.smiles_i, p.smiles_j)}
