"""Pre-training corpus construction from reactant/product tables."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .smiles import (ALLOWED_ELEMENTS, SmilesError, UnsupportedElementError, canonical_form, elements,
                     has_stereo, heavy_atom_count, parse_smiles, strip_stereo)
from .training import PreferencePair

log = logging.getLogger(__name__)

MIN_HEAVY_ATOMS = 4
REJECT_REASONS = ("empty", "parse_error", "disallowed_element", "identical", "too_small", "duplicate")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ReactionPair:
    reactant: str
    product: str

    def __post_init__(self):
        if self.reactant == self.product:
            raise ValueError("reactant and product are identical")


@dataclass
class FilterReport:
    rows: int = 0
    kept: int = 0
    rejected: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "kept": self.kept,
                "rejected": {r: self.rejected.get(r, 0) for r in REJECT_REASONS}}


def _canonical_or_reason(text: str, cache: dict) -> tuple[str | None, int, str | None]:
    """(canonical form, heavy atoms, rejection reason) for one molecule."""
    if text in cache:
        return cache[text]
    try:
        mol = parse_smiles(text)
    except UnsupportedElementError:
        out = (None, 0, "disallowed_element")
    except SmilesError:
        out = (None, 0, "parse_error")
    else:
        if not elements(mol) <= set(ALLOWED_ELEMENTS):
            out = (None, 0, "disallowed_element")
        else:
            out = (canonical_form(mol), heavy_atom_count(mol), None)
    cache[text] = out
    return out


def filter_rows(rows: Iterable[tuple[str, str]], report: FilterReport | None = None) -> tuple[list[ReactionPair], FilterReport]:
    """Apply the corpus rules to raw (reactant, product) rows.

    Reactant fields holding several molecules separated by '.' become one
    pair per reactant. Rejections are counted once per expanded pair.
    """
    report = report or FilterReport()
    cache: dict = {}
    seen: set[tuple[str, str]] = set()
    out: list[ReactionPair] = []
    for reactants, product in rows:
        report.rows += 1
        reactants, product = (reactants or "").strip(), (product or "").strip()
        if not reactants or not product:
            report.rejected["empty"] += 1
            continue
        prod, p_heavy, reason = _canonical_or_reason(product, cache)
        parts = [r for r in reactants.split(".") if r]
        for r in parts:
            if reason is not None:
                report.rejected[reason] += 1
                continue
            reac, r_heavy, r_reason = _canonical_or_reason(r, cache)
            if r_reason is not None:
                report.rejected[r_reason] += 1
            elif reac == prod:
                report.rejected["identical"] += 1
            elif min(r_heavy, p_heavy) < MIN_HEAVY_ATOMS:
                report.rejected["too_small"] += 1
            elif (reac, prod) in seen:
                report.rejected["duplicate"] += 1
            else:
                seen.add((reac, prod))
                out.append(ReactionPair(reac, prod))
    report.kept = len(out)
    return out, report


def _sniff_delimiter(path: Path) -> str:
    with path.open(newline="") as fh:
        head = fh.readline()
    return "\t" if head.count("\t") > head.count(",") else ","


def load_and_filter(path: str | Path, reactant_col: str = "reactant",
                    product_col: str = "product") -> tuple[list[ReactionPair], FilterReport]:
    path = Path(path)
    try:
        delimiter = _sniff_delimiter(path)
        fh = path.open(newline="")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [c for c in (reactant_col, product_col) if c not in (reader.fieldnames or [])]
        if missing:
            raise CorpusError(f"{path}: missing column(s) {', '.join(missing)}")
        return filter_rows((row[reactant_col], row[product_col]) for row in reader)


def remove_cycles_dfs(edges: Iterable[tuple[str, str]]) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Drop DFS back edges so the reaction network becomes acyclic.

    Roots and neighbours are visited in lexicographic order; returns
    (kept edges, removed edges), both in input order.
    """
    edges = list(dict.fromkeys(edges))
    succ: dict[str, list[str]] = defaultdict(list)
    nodes: set[str] = set()
    for a, b in edges:
        succ[a].append(b)
        nodes.update((a, b))
    for a in succ:
        succ[a].sort()
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(nodes, WHITE)
    back: set[tuple[str, str]] = set()
    for root in sorted(nodes):
        if color[root] != WHITE:
            continue
        color[root] = GREY
        stack = [(root, iter(succ.get(root, ())))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                back.add((node, nxt))
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(succ.get(nxt, ()))))
    kept = [e for e in edges if e not in back]
    removed = [e for e in edges if e in back]
    return kept, removed


def prune_network(pairs: Sequence[ReactionPair]) -> tuple[list[ReactionPair], list[ReactionPair]]:
    kept, removed = remove_cycles_dfs((p.reactant, p.product) for p in pairs)
    drop = set(removed)
    return ([p for p in pairs if (p.reactant, p.product) not in drop],
            [p for p in pairs if (p.reactant, p.product) in drop])


@dataclass
class SplitResult:
    train: list
    test: list
    achieved_fraction: float


def disjoint_split(pairs: Sequence, test_fraction: float = 0.2,
                   members=lambda p: (p.reactant, p.product)) -> SplitResult:
    """Split so that no molecule appears on both sides.

    Pairs sharing a molecule form components (union-find); whole components
    go to test, largest first (earliest on ties), until the target is met.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must lie in (0, 1)")
    parent: dict[str, str] = {}

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for p in pairs:
        mols = members(p)
        for m in mols:
            parent.setdefault(m, m)
        for m in mols[1:]:
            ra, rb = find(mols[0]), find(m)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[int]] = {}
    for k, p in enumerate(pairs):
        groups.setdefault(find(members(p)[0]), []).append(k)
    comps = sorted(groups.values(), key=lambda g: (-len(g), g[0]))
    target = test_fraction * len(pairs)
    test_idx: list[int] = []
    for comp in comps:
        if len(test_idx) >= target:
            break
        test_idx.extend(comp)
    chosen = set(test_idx)
    test = [pairs[k] for k in sorted(chosen)]
    train = [p for k, p in enumerate(pairs) if k not in chosen]
    frac = len(test) / len(pairs) if pairs else 0.0
    return SplitResult(train, test, frac)


def make_chirality_pairs(smiles: Sequence[str], n: int = 1000, seed: int = 0) -> list[PreferencePair]:
    """Pair stereo-annotated molecules with their stereo-free form, which is taken as easier."""
    candidates = []
    for s in dict.fromkeys(smiles):
        try:
            mol = parse_smiles(s)
        except SmilesError:
            continue
        if not has_stereo(mol):
            continue
        stereo, flat = canonical_form(mol), canonical_form(strip_stereo(mol))
        if stereo != flat:
            candidates.append((flat, stereo))
    if len(candidates) < n:
        raise CorpusError(f"only {len(candidates)} stereo molecules, need {n}")
    pick = np.random.default_rng(seed).choice(len(candidates), size=n, replace=False)
    return [PreferencePair(*candidates[k], target=1, source="chirality") for k in sorted(pick)]


def reaction_to_preference(pairs: Iterable[ReactionPair]) -> list[PreferencePair]:
    return [PreferencePair(p.reactant, p.product, 1, source="reaction") for p in pairs]


def read_pairs_csv(path: str | Path) -> list[PreferencePair]:
    """``smiles_i,smiles_j[,target]``; a missing or blank target stays None."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in ("smiles_i", "smiles_j"):
            if c not in cols:
                raise CorpusError(f"{path}: missing column {c}")
        out = []
        for row in reader:
            t = (row.get("target") or "").strip()
            out.append(PreferencePair(row["smiles_i"].strip(), row["smiles_j"].strip(),
                                      int(float(t)) if t else None))
        return out


def write_pairs_csv(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles_i", "smiles_j", "target"])
        for p in pairs:
            w.writerow([p.smiles_i, p.smiles_j, "" if p.target is None else p.target])


def write_report(report: FilterReport, path: str | Path, **extra) -> None:
    Path(path).write_text(json.dumps({**report.to_dict(), **extra}, indent=2) + "\n")


def build_corpus(path: str | Path, out_dir: str | Path, test_fraction: float = 0.2,
                 reactant_col: str = "reactant", product_col: str = "product") -> dict:
    """Filter, prune cycles, split and write ``train.csv``, ``test.csv`` and ``report.json``."""
    out_dir = Path(out_dir)
    pairs, report = load_and_filter(path, reactant_col, product_col)
    if not pairs:
        raise CorpusError("no pairs survived filtering")
    kept, removed = prune_network(pairs)
    split = disjoint_split(kept, test_fraction)
    write_pairs_csv(reaction_to_preference(split.train), out_dir / "train.csv")
    write_pairs_csv(reaction_to_preference(split.test), out_dir / "test.csv")
    summary = {"cycle_edges_removed": len(removed), "train": len(split.train), "test": len(split.test),
               "test_fraction": split.achieved_fraction}
    write_report(report, out_dir / "report.json", **summary)
    return {**report.to_dict(), **summary}
