"""Atom-graph featurisation and iterated line graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smiles import BondOrder, Molecule

ATOM_TYPES = ("H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I", "Se")
CHARGES = tuple(range(-4, 5))
HYDROGENS = tuple(range(5))
DEGREES = tuple(range(5))
HYBRIDIZATIONS = ("UNSPECIFIED", "S", "SP", "SP2", "SP3", "SP3D", "SP3D2", "OTHER")
CHIRAL_TAGS = ("@", "@@", None)  # the two assigned parities, then unassigned
BOND_TYPES = (BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.TRIPLE, BondOrder.AROMATIC)

# (name, width) in column order; one-hot widths include the overflow slot
NODE_BLOCKS = (
    ("atom_type", len(ATOM_TYPES) + 1),
    ("charge", len(CHARGES) + 1),
    ("hydrogens", len(HYDROGENS) + 1),
    ("degree", len(DEGREES) + 1),
    ("ring", 1),
    ("aromatic", 1),
    ("hybridization", len(HYBRIDIZATIONS) + 1),
    ("chiral_tag", len(CHIRAL_TAGS) + 1),
)
EDGE_BLOCKS = (("bond_type", len(BOND_TYPES) + 1), ("conjugated", 1), ("ring", 1))
NODE_DIM = sum(w for _, w in NODE_BLOCKS)
EDGE_DIM = sum(w for _, w in EDGE_BLOCKS)
assert NODE_DIM == 51 and EDGE_DIM == 7

_SATURATED_SP3 = {"B", "C", "N", "O", "Si", "P", "S", "Se"}


def _one_hot(value, choices) -> list[float]:
    out = [0.0] * (len(choices) + 1)
    try:
        out[choices.index(value)] = 1.0
    except ValueError:
        out[-1] = 1.0
    return out


def hybridization(mol: Molecule, idx: int) -> str:
    atom = mol.atoms[idx]
    orders = [mol.bonds[k].order for _, k in mol.adjacency[idx]]
    n_double = sum(o == BondOrder.DOUBLE for o in orders)
    if BondOrder.TRIPLE in orders or n_double >= 2:
        return "SP"
    if atom.aromatic or n_double == 1:
        return "SP2"
    if atom.element in _SATURATED_SP3:
        return "SP3"
    return "UNSPECIFIED"


def atom_features(mol: Molecule, idx: int) -> list[float]:
    a = mol.atoms[idx]
    return (
        _one_hot(a.element, ATOM_TYPES)
        + _one_hot(a.charge, CHARGES)
        + _one_hot(a.hydrogens, HYDROGENS)
        + _one_hot(a.degree, DEGREES)
        + [float(a.in_ring), float(a.aromatic)]
        + _one_hot(hybridization(mol, idx), HYBRIDIZATIONS)
        + _one_hot(a.stereo, CHIRAL_TAGS)
    )


def bond_features(mol: Molecule, k: int) -> list[float]:
    b = mol.bonds[k]
    return _one_hot(b.order, BOND_TYPES) + [float(b.conjugated), float(b.in_ring)]


@dataclass(frozen=True)
class FeatureGraph:
    node_features: np.ndarray  # (n_nodes, NODE_DIM)
    edges: np.ndarray  # (n_edges, 2) int, each row (min, max)
    edge_features: np.ndarray | None  # (n_edges, EDGE_DIM) at level 0 only
    level: int = 0

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg


@dataclass(frozen=True)
class GraphBundle:
    levels: tuple[FeatureGraph, ...]

    def __getitem__(self, k: int) -> FeatureGraph:
        return self.levels[k]

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1


def featurize(mol: Molecule) -> FeatureGraph:
    nodes = np.array([atom_features(mol, i) for i in range(len(mol.atoms))], dtype=np.float64)
    nodes = nodes.reshape(len(mol.atoms), NODE_DIM)
    # bonds are stored sorted by (begin, end) with begin < end after parsing
    order = sorted(range(len(mol.bonds)), key=lambda k: (mol.bonds[k].begin, mol.bonds[k].end))
    edges = np.array([(min(mol.bonds[k].begin, mol.bonds[k].end), max(mol.bonds[k].begin, mol.bonds[k].end))
                      for k in order], dtype=np.int64).reshape(-1, 2)
    efeat = np.array([bond_features(mol, k) for k in order], dtype=np.float64).reshape(-1, EDGE_DIM)
    return FeatureGraph(nodes, edges, efeat, 0)


def line_graph_edges(edges: np.ndarray) -> np.ndarray:
    """Pairs of edge indices sharing an endpoint, lexicographically sorted."""
    incident: dict[int, list[int]] = {}
    for k, (u, v) in enumerate(edges.tolist()):
        incident.setdefault(u, []).append(k)
        incident.setdefault(v, []).append(k)
    pairs = set()
    for ks in incident.values():
        for a in range(len(ks)):
            for b in range(a + 1, len(ks)):
                pairs.add((min(ks[a], ks[b]), max(ks[a], ks[b])))
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def line_graph(g: FeatureGraph) -> FeatureGraph:
    """Nodes are the edges of ``g`` (in stored order); features are endpoint sums.

    At level 0 the bond features are added, zero-padded to the node width.
    """
    if g.n_edges == 0:
        return FeatureGraph(np.zeros((0, g.node_features.shape[1])), np.zeros((0, 2), dtype=np.int64),
                            None, g.level + 1)
    x = g.node_features
    feats = x[g.edges[:, 0]] + x[g.edges[:, 1]]
    if g.edge_features is not None:
        feats = feats.copy()
        feats[:, :g.edge_features.shape[1]] += g.edge_features
    return FeatureGraph(feats, line_graph_edges(g.edges), None, g.level + 1)


def build_bundle(mol: Molecule, max_level: int = 2) -> GraphBundle:
    if max_level < 0:
        raise ValueError("max_level must be >= 0")
    levels = [featurize(mol)]
    for _ in range(max_level):
        levels.append(line_graph(levels[-1]))
    return GraphBundle(tuple(levels))
