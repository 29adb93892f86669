"""Random valid SMILES built without the package's writer, for property tests."""

from __future__ import annotations

import numpy as np

from fsscore.smiles import canonicalize, heavy_atom_count, parse_smiles
from fsscore.training import PreferencePair

_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1, "Cl": 1, "S": 2}
_WEIGHTS = {"C": 0.62, "N": 0.14, "O": 0.14, "F": 0.03, "Cl": 0.03, "S": 0.04}


def random_smiles(rng: np.random.Generator, n_atoms: int, ring_prob: float = 0.4,
                  double_prob: float = 0.1, stereo_prob: float = 0.0) -> str:
    """A connected molecule with ``n_atoms`` heavy atoms, possibly one ring and some double bonds."""
    names = list(_WEIGHTS)
    p = np.array([_WEIGHTS[e] for e in names])
    elems = ["C"]
    cap = [4]
    edges: dict[tuple[int, int], int] = {}
    for i in range(1, n_atoms):
        parents = [k for k in range(i) if cap[k] >= 1]
        e = str(rng.choice(names, p=p / p.sum()))
        if not parents:
            break
        if _VALENCE[e] == 1 and len(parents) == 1 and i < n_atoms - 1:
            e = "C"  # keep the tree growable
        parent = int(rng.choice(parents))
        elems.append(e)
        cap.append(_VALENCE[e] - 1)
        cap[parent] -= 1
        edges[(parent, i)] = 1
    n = len(elems)
    if n >= 5 and rng.random() < ring_prob:
        free = [k for k in range(n) if cap[k] >= 1]
        cands = [(a, b) for a in free for b in free if a < b and (a, b) not in edges]
        if cands:
            a, b = cands[int(rng.integers(len(cands)))]
            edges[(a, b)] = 1
            cap[a] -= 1
            cap[b] -= 1
    for key in list(edges):
        a, b = key
        if cap[a] >= 1 and cap[b] >= 1 and rng.random() < double_prob:
            edges[key] = 2
            cap[a] -= 1
            cap[b] -= 1
    return _emit(elems, edges, cap, rng, stereo_prob)


def _emit(elems, edges, cap, rng, stereo_prob) -> str:
    n = len(elems)
    adj: dict[int, list[int]] = {k: [] for k in range(n)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    root = int(rng.integers(n))
    seen = {root}
    order = []
    tree: dict[int, list[int]] = {k: [] for k in range(n)}
    stack = [root]
    while stack:
        u = stack.pop()
        order.append(u)
        nbrs = list(adj[u])
        rng.shuffle(nbrs)
        for v in nbrs:
            if v not in seen:
                seen.add(v)
                tree[u].append(v)
                stack.append(v)
    tree_edges = {(min(u, v), max(u, v)) for u in tree for v in tree[u]}
    ring_edges = [e for e in edges if e not in tree_edges]
    labels: dict[int, list[tuple[int, int]]] = {k: [] for k in range(n)}
    for d, (a, b) in enumerate(ring_edges, start=1):
        labels[a].append((d, edges[(a, b)]))
        labels[b].append((d, 0))

    def token(u):
        e = elems[u]
        h = cap[u] if e in ("C", "N", "O", "S") else 0
        if e == "C" and stereo_prob and len(adj[u]) == 3 and h == 1 and rng.random() < stereo_prob:
            return "[C" + str(rng.choice(["@", "@@"])) + "H]"
        return e

    def write(u, parent) -> str:
        out = token(u)
        for d, order_ in labels[u]:
            out += ("=" if order_ == 2 else "") + str(d)
        kids = tree[u]
        for k, v in enumerate(kids):
            bond = "=" if edges[(min(u, v), max(u, v))] == 2 else ""
            body = bond + write(v, u)
            out += body if k == len(kids) - 1 else "(" + body + ")"
        return out

    return write(root, None)


def random_corpus(seed: int, size: int, lo: int = 4, hi: int = 12, **kw) -> list[str]:
    rng = np.random.default_rng(seed)
    return [random_smiles(rng, int(rng.integers(lo, hi + 1)), **kw) for _ in range(size)]


def heavy_atom_pairs(n_pairs: int, seed: int, lo: int = 4, hi: int = 12) -> list[PreferencePair]:
    """Pairs of random molecules where the one with fewer heavy atoms is easier (stored as i, target 1)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_pairs:
        a = canonicalize(random_smiles(rng, int(rng.integers(lo, hi + 1))))
        b = canonicalize(random_smiles(rng, int(rng.integers(lo, hi + 1))))
        na, nb = heavy_atom_count(parse_smiles(a)), heavy_atom_count(parse_smiles(b))
        if na == nb:
            continue
        easy, hard = (a, b) if na < nb else (b, a)
        out.append(PreferencePair(easy, hard, 1, source="synthetic"))
    return out
