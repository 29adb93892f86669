"""Fine-tuning pair construction: Tanimoto k-means, silhouette model selection,
constrained pair assembly, MC-dropout uncertainty ranking and catalog pairing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .fingerprint import Fingerprint, minmax_similarity_matrix, morgan_fingerprint, stack_dense
from .model import ScoreModel, embed, head, prepare_input
from .smiles import canonical_form, parse_smiles
from .training import PreferencePair

log = logging.getLogger(__name__)

ASSEMBLY_MODES = ("unique", "overlapping")


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    k_min: int = 3
    k_max: int = 9
    max_iter: int = 100
    seed: int = 0
    # "max" is the usual silhouette criterion; "min" picks the lowest mean instead
    criterion: str = "max"

    def __post_init__(self):
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError(f"invalid k range [{self.k_min}, {self.k_max}]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.criterion not in ("max", "min"):
            raise ValueError(f"criterion must be 'max' or 'min', got {self.criterion!r}")

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    @classmethod
    def for_budget(cls, n_pairs: int, **kw) -> "ClusterConfig":
        lo, hi = (5, 29) if n_pairs > 500 else (3, 9)
        return cls(k_min=lo, k_max=hi, **kw)


@dataclass(frozen=True)
class UncertainPair:
    pair: PreferencePair
    variance: float


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: list[float] = field(default_factory=list)
    n_iter: int = 0


def _as_matrix(fps) -> np.ndarray:
    if isinstance(fps, np.ndarray):
        return np.asarray(fps, dtype=np.float64)
    fps = list(fps)
    if fps and isinstance(fps[0], Fingerprint):
        return stack_dense(fps)
    return np.asarray(fps, dtype=np.float64)


def _distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return 1.0 - minmax_similarity_matrix(x, c)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d = _distances(x, x[chosen])[:, 0]
    for _ in range(1, k):
        w = d * d
        w[chosen] = 0.0
        if w.sum() > 0:
            nxt = int(rng.choice(n, p=w / w.sum()))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d = np.minimum(d, _distances(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _reseed_empty(labels: np.ndarray, dist: np.ndarray, k: int, centroids: np.ndarray, x: np.ndarray) -> None:
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        own = dist[np.arange(len(labels)), labels].copy()
        own[sizes[labels] < 2] = -1.0  # never empty another cluster
        far = int(np.argmax(own))
        labels[far] = c
        centroids[c] = x[far]
        dist[:, c] = _distances(x, x[[far]])[:, 0]


def kmeans_tanimoto(fps, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations with MinMax-Tanimoto distance to real-valued centroids.

    A centroid moves to its members' mean only when that lowers the members'
    summed distance, which keeps the objective non-increasing.
    """
    x = _as_matrix(fps)
    n = x.shape[0]
    if n == 0:
        raise ClusteringError("no points to cluster")
    if not 2 <= k <= n:
        raise ClusteringError(f"k={k} outside [2, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    dist = _distances(x, centroids)
    labels = np.argmin(dist, axis=1)
    _reseed_empty(labels, dist, k, centroids, x)
    history = [float(dist[np.arange(n), labels].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(k):
            members = labels == c
            mean = x[members].mean(axis=0, keepdims=True)
            old = dist[members, c].sum()
            new_d = _distances(x[members], mean)[:, 0]
            if new_d.sum() <= old:
                centroids[c] = mean[0]
        dist = _distances(x, centroids)
        # keep the current label on ties so assignments can settle
        current = dist[np.arange(n), labels]
        best = np.argmin(dist, axis=1)
        new_labels = np.where(dist[np.arange(n), best] < current, best, labels)
        _reseed_empty(new_labels, dist, k, centroids, x)
        history.append(float(dist[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels=labels, centroids=centroids, objective=history, n_iter=it)


def silhouette_samples(dist: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point silhouette from a precomputed distance matrix; singletons score 0."""
    labels = np.asarray(labels)
    n = len(labels)
    clusters = np.unique(labels)
    out = np.zeros(n)
    if len(clusters) < 2:
        return out
    means = np.stack([dist[:, labels == c].sum(axis=1) for c in clusters], axis=1)
    sizes = np.array([np.sum(labels == c) for c in clusters])
    own_idx = np.searchsorted(clusters, labels)
    for i in range(n):
        own_size = sizes[own_idx[i]]
        if own_size < 2:
            continue
        a = means[i, own_idx[i]] / (own_size - 1)
        other = np.delete(means[i] / sizes, own_idx[i])
        b = other.min()
        m = max(a, b)
        out[i] = (b - a) / m if m > 0 else 0.0
    return out


def select_k_silhouette(fps, cfg: ClusterConfig = ClusterConfig()) -> tuple[int, dict[int, float], KMeansResult]:
    """Cluster for every k in range and pick by mean silhouette (ties: smaller k)."""
    x = _as_matrix(fps)
    n = x.shape[0]
    if cfg.k_max >= n:
        raise ClusteringError(f"k range up to {cfg.k_max} needs more than {n} points")
    dist = _distances(x, x)
    np.fill_diagonal(dist, 0.0)
    scores: dict[int, float] = {}
    results: dict[int, KMeansResult] = {}
    for k in cfg.k_range:
        res = kmeans_tanimoto(x, k, cfg.seed, cfg.max_iter)
        results[k] = res
        scores[k] = float(silhouette_samples(dist, res.labels).mean())
    sign = 1.0 if cfg.criterion == "max" else -1.0
    best = max(cfg.k_range, key=lambda k: (sign * scores[k], -k))
    log.info("silhouette scores %s -> k=%d", scores, best)
    return best, scores, results[best]


def _make_pair(mols, i, j, labels) -> PreferencePair:
    target = None if labels is None else int(labels[i] == 1)
    return PreferencePair(mols[i], mols[j], target, source="cluster")


def assemble_pairs(mols: Sequence[str], clusters: Sequence[int], labels: Sequence[int] | None = None,
                   mode: str = "unique", seed: int = 0, max_pairs: int | None = None) -> list[PreferencePair]:
    """Greedy cross-cluster matching over a seeded shuffle.

    Labels use 1 for easy and 0 for hard; labelled pairs always join one of
    each, with ``target`` set from the first member.
    """
    if mode not in ASSEMBLY_MODES:
        raise ValueError(f"mode must be one of {ASSEMBLY_MODES}")
    n = len(mols)
    if len(clusters) != n or (labels is not None and len(labels) != n):
        raise ValueError("clusters and labels must cover every molecule")
    clusters = np.asarray(clusters)
    lab = None if labels is None else np.asarray(labels)

    def ok(i, j):
        if clusters[i] == clusters[j]:
            return False
        return lab is None or lab[i] != lab[j]

    order = np.random.default_rng(seed).permutation(n)
    limit = max_pairs if max_pairs is not None else n
    pairs: list[PreferencePair] = []
    if mode == "unique":
        used = np.zeros(n, dtype=bool)
        for a, i in enumerate(order):
            if used[i]:
                continue
            for j in order[a + 1:]:
                if not used[j] and ok(i, j):
                    used[i] = used[j] = True
                    pairs.append(_make_pair(mols, i, j, lab))
                    break
            if len(pairs) >= limit:
                break
    else:
        seen: set[tuple[int, int]] = set()
        for a, i in enumerate(order):
            # each molecule proposes one partner, scanning the shuffle cyclically
            for j in np.roll(order, -a - 1)[:-1]:
                key = (min(i, j), max(i, j))
                if key not in seen and ok(i, j):
                    seen.add(key)
                    pairs.append(_make_pair(mols, i, j, lab))
                    break
            if len(pairs) >= limit:
                break
    if not pairs:
        log.warning("no molecule pair satisfies the clustering/label constraints")
    return pairs


def mc_delta_samples(model: ScoreModel, pairs: Sequence[PreferencePair], n_samples: int = 100,
                     rate: float = 0.2, seed: int = 0) -> np.ndarray:
    """Score differences under MC dropout, shape (n_samples, n_pairs).

    The dropout-free embedding is computed once; only the head is resampled.
    """
    uniq = list(dict.fromkeys(s for p in pairs for s in (p.smiles_i, p.smiles_j)))
    index = {s: k for k, s in enumerate(uniq)}
    ii = np.array([index[p.smiles_i] for p in pairs], dtype=np.intp)
    jj = np.array([index[p.smiles_j] for p in pairs], dtype=np.intp)
    rng = ad.DropoutRNG(seed)
    with ad.no_tape():
        parts = [embed(model, [prepare_input(model.config, s) for s in uniq[a:a + 256]]).data
                 for a in range(0, len(uniq), 256)]
        emb = ad.Tensor(np.concatenate(parts) if parts else np.zeros((0, 1), dtype=model.dtype))
        out = np.empty((n_samples, len(pairs)))
        for s in range(n_samples):
            scores = head(model, emb, rate, rng.start(s)).data[:, 0].astype(np.float64)
            out[s] = scores[ii] - scores[jj]
    return out


def rank_by_uncertainty(model: ScoreModel, pairs: Sequence[PreferencePair], n_samples: int = 100,
                        rate: float = 0.2, seed: int = 0) -> list[UncertainPair]:
    """Pairs sorted by descending population variance of the MC-dropout score difference."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if not pairs:
        return []
    var = mc_delta_samples(model, pairs, n_samples, rate, seed).var(axis=0)
    order = np.argsort(-var, kind="stable")
    return [UncertainPair(pairs[k], float(var[k])) for k in order]


def labels_from_continuous(values: Sequence[float], index_pairs: Sequence[tuple[int, int]],
                           threshold: float = 2.0) -> list[int | None]:
    """Pair labels from a complexity scale where higher means harder.

    Returns 1 when the first member is easier, 0 when the second is, and
    None when the gap is below ``threshold``.
    """
    v = np.asarray(values, dtype=np.float64)
    out: list[int | None] = []
    for i, j in index_pairs:
        gap = v[j] - v[i]
        out.append(None if abs(gap) < threshold else int(gap > 0))
    return out


@dataclass
class Catalog:
    smiles: list[str]
    canonical: list[str]
    matrix: np.ndarray
    columns: dict[int, int]


def build_catalog(smiles: Sequence[str], radius: int = 4, n_bits: int = 2048, variant: str = "counts") -> Catalog:
    if not smiles:
        raise ValueError("catalog is empty")
    mols = [parse_smiles(s) for s in smiles]
    fps = [morgan_fingerprint(m, radius, n_bits, variant) for m in mols]
    cols = sorted(set().union(*(fp.data.keys() for fp in fps)))
    columns = {c: k for k, c in enumerate(cols)}
    return Catalog(list(smiles), [canonical_form(m) for m in mols], stack_dense(fps), columns)


def load_catalog(path: str | Path, **fp_kw) -> Catalog:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "smiles" not in reader.fieldnames:
            raise ValueError(f"{path}: catalog needs a 'smiles' column")
        return build_catalog([row["smiles"].strip() for row in reader if row["smiles"].strip()], **fp_kw)


def _project(fp: Fingerprint, columns: dict[int, int], width: int) -> tuple[np.ndarray, float]:
    row = np.zeros(width)
    outside = 0.0
    for pos, c in fp.data.items():
        k = columns.get(pos)
        if k is None:
            outside += c
        else:
            row[k] = c
    return row, outside


def pair_with_catalog(queries: Sequence[str], catalog: Catalog, radius: int = 4, n_bits: int = 2048,
                      variant: str = "counts") -> list[PreferencePair]:
    """Pair each query with its most similar catalog molecule, which is taken as easier.

    Queries already in the catalog are dropped; ties go to the earlier entry.
    """
    if not catalog.smiles:
        raise ValueError("catalog is empty")
    exact = set(catalog.canonical)
    sums = catalog.matrix.sum(axis=1)
    pairs = []
    for q in queries:
        mol = parse_smiles(q)
        if canonical_form(mol) in exact:
            continue
        row, outside = _project(morgan_fingerprint(mol, radius, n_bits, variant), catalog.columns,
                                catalog.matrix.shape[1])
        lo = np.minimum(catalog.matrix, row).sum(axis=1)
        hi = sums + row.sum() + outside - lo
        sim = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
        best = int(np.argmax(sim))
        pairs.append(PreferencePair(catalog.smiles[best], q, 1, source="catalog"))
    return pairs
