"""File-level operations shared by the command line and the HTTP service."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .fingerprint import morgan_fingerprint, stack_dense
from .model import ScoreModel, predict
from .pairing import ClusterConfig, UncertainPair, assemble_pairs, kmeans_tanimoto, rank_by_uncertainty, select_k_silhouette
from .smiles import SmilesError, canonical_form, parse_smiles
from .training import PreferencePair

log = logging.getLogger(__name__)


class InputError(ValueError):
    """Unreadable or malformed user input (files, columns, SMILES)."""


def read_column(path: str | Path, column: str = "smiles") -> list[str]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise InputError(f"{path}: missing required column '{column}'")
        return [row[column].strip() for row in reader if (row[column] or "").strip()]


def check_smiles(smiles: Sequence[str]) -> None:
    for s in smiles:
        try:
            parse_smiles(s)
        except SmilesError as exc:
            raise InputError(f"invalid SMILES {s!r}: {exc}") from exc


def score_molecules(model: ScoreModel, smiles: Sequence[str]) -> np.ndarray:
    check_smiles(smiles)
    return predict(model, list(smiles))


def write_scores(path: str | Path, smiles: Sequence[str], scores: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles", "score"])
        for s, v in zip(smiles, scores):
            w.writerow([s, repr(float(v))])


def cluster_molecules(smiles: Sequence[str], seed: int = 0, criterion: str = "max",
                      budget: int | None = None) -> np.ndarray:
    """Silhouette-selected Tanimoto k-means labels for a molecule list."""
    n = len(smiles)
    if n < 3:
        raise InputError(f"need at least 3 molecules to cluster, got {n}")
    fps = stack_dense([morgan_fingerprint(parse_smiles(s)) for s in smiles])
    cfg = ClusterConfig.for_budget(n // 2 if budget is None else budget, seed=seed, criterion=criterion)
    k_max = min(cfg.k_max, n - 1)
    k_min = min(cfg.k_min, k_max)
    if k_min == k_max:
        return kmeans_tanimoto(fps, k_min, seed, cfg.max_iter).labels
    cfg = ClusterConfig(k_min, k_max, cfg.max_iter, seed, criterion)
    _, _, result = select_k_silhouette(fps, cfg)
    return result.labels


def rank_molecule_pairs(model: ScoreModel, smiles: Sequence[str], seed: int = 0, n_samples: int = 100,
                        rate: float = 0.2, mode: str = "unique", criterion: str = "max",
                        labels: Sequence[int] | None = None) -> list[UncertainPair]:
    """Cluster, pair across clusters and order by MC-dropout variance."""
    check_smiles(smiles)
    uniq = list(dict.fromkeys(canonical_form(parse_smiles(s)) for s in smiles))
    if len(uniq) != len(smiles):
        log.info("dropped %d duplicate molecules", len(smiles) - len(uniq))
        if labels is not None:
            raise InputError("duplicate molecules in a labelled input")
    clusters = cluster_molecules(uniq, seed, criterion)
    pairs = assemble_pairs(uniq, clusters, labels, mode=mode, seed=seed)
    return rank_by_uncertainty(model, pairs, n_samples=n_samples, rate=rate, seed=seed)


def write_ranked_pairs(path: str | Path, ranked: Sequence[UncertainPair]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles_i", "smiles_j", "variance"])
        for u in ranked:
            w.writerow([u.pair.smiles_i, u.pair.smiles_j, repr(u.variance)])


def read_ranked_pairs(path: str | Path) -> list[UncertainPair]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        for c in ("smiles_i", "smiles_j"):
            if c not in (reader.fieldnames or []):
                raise InputError(f"{path}: missing required column '{c}'")
        return [UncertainPair(PreferencePair(r["smiles_i"], r["smiles_j"]), float(r.get("variance") or 0.0))
                for r in reader]


def target_from_harder(harder: str) -> int:
    """Convert a "which one is harder" answer into the training target.

    Targets mark the easier member as preferred: target 1 means smiles_i is
    easier, so choosing j as harder gives 1 and choosing i gives 0. This is
    the only place where that conversion happens.
    """
    if harder == "j":
        return 1
    if harder == "i":
        return 0
    raise ValueError(f"harder must be 'i' or 'j', got {harder!r}")
