"""Circular (Morgan-style) fingerprints and Tanimoto similarity."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .smiles import Molecule

VARIANTS = ("boolean", "counts", "boolean_chiral", "counts_chiral")
_STEREO_CODE = {None: 0, "@": 1, "@@": 2}
_ELEMENT_CODE = {"H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15, "S": 16,
                 "Cl": 17, "Se": 34, "Br": 35, "I": 53}


_MASK64 = (1 << 64) - 1


def _hash(values: Sequence[int]) -> int:
    packed = struct.pack(f"<{len(values)}Q", *(v & _MASK64 for v in values))
    return int.from_bytes(hashlib.blake2b(packed, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Fingerprint:
    n_bits: int = 2048
    radius: int = 4
    variant: str = "counts"
    data: dict[int, int] = field(default_factory=dict)

    @property
    def counted(self) -> bool:
        return self.variant.startswith("counts")

    def to_dense(self, dtype=np.float32) -> np.ndarray:
        out = np.zeros(self.n_bits, dtype=dtype)
        for pos, c in self.data.items():
            out[pos] = c
        return out

    def __len__(self) -> int:
        return len(self.data)


def morgan_fingerprint(mol: Molecule, radius: int = 4, n_bits: int = 2048, variant: str = "counts") -> Fingerprint:
    """Hash every atom environment up to ``radius`` bonds into ``n_bits`` positions.

    An environment is recorded only when its bond set is new: atoms whose
    neighbourhood stops growing, and environments covering a bond set already
    seen, add nothing.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown fingerprint variant {variant!r}")
    if radius < 0 or n_bits <= 0:
        raise ValueError("radius must be >= 0 and n_bits > 0")
    chiral = variant.endswith("chiral")
    adj = mol.adjacency
    ids = []
    for a in mol.atoms:
        inv = [_ELEMENT_CODE[a.element], a.charge, a.degree, a.hydrogens, int(a.aromatic), int(a.in_ring)]
        if chiral:
            inv.append(_STEREO_CODE[a.stereo])
        ids.append(_hash(inv))

    counts: dict[int, int] = {}

    def record(identifier: int) -> None:
        pos = identifier % n_bits
        counts[pos] = counts.get(pos, 0) + 1

    for identifier in ids:
        record(identifier)

    seen_envs: set[frozenset[int]] = set()
    envs = [frozenset() for _ in mol.atoms]
    for r in range(1, radius + 1):
        new_ids = []
        candidates = []
        for i in range(len(mol.atoms)):
            nbr = sorted((int(mol.bonds[k].order), ids[j]) for j, k in adj[i])
            flat = [r, ids[i]] + [x for pair in nbr for x in pair]
            new_ids.append(_hash(flat))
            env = set(envs[i])
            for j, k in adj[i]:
                env.add(k)
                env.update(envs[j])
            candidates.append(frozenset(env))
        # same-radius duplicates: keep the lowest identifier
        order = sorted(range(len(mol.atoms)), key=lambda i: new_ids[i])
        for i in order:
            env = candidates[i]
            if env == envs[i] or env in seen_envs:
                continue
            seen_envs.add(env)
            record(new_ids[i])
        ids = new_ids
        envs = candidates

    if not variant.startswith("counts"):
        counts = {p: 1 for p in counts}
    return Fingerprint(n_bits=n_bits, radius=radius, variant=variant, data=dict(sorted(counts.items())))


def _check_compatible(a: Fingerprint, b: Fingerprint) -> None:
    if a.n_bits != b.n_bits or a.variant != b.variant:
        raise ValueError(
            f"incompatible fingerprints: {a.variant}/{a.n_bits} vs {b.variant}/{b.n_bits}"
        )


def tanimoto_similarity(a: Fingerprint, b: Fingerprint) -> float:
    """Set Tanimoto for boolean variants, MinMax Tanimoto for counts."""
    _check_compatible(a, b)
    if not a.data and not b.data:
        return 1.0
    keys = a.data.keys() | b.data.keys()
    lo = hi = 0
    for k in keys:
        x, y = a.data.get(k, 0), b.data.get(k, 0)
        lo += min(x, y)
        hi += max(x, y)
    return lo / hi


def tanimoto_distance(a: Fingerprint, b: Fingerprint) -> float:
    return 1.0 - tanimoto_similarity(a, b)


def minmax_similarity_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """MinMax Tanimoto between rows of ``x`` and rows of ``y`` (real-valued allowed)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx = x.sum(axis=1)
    sy = y.sum(axis=1)
    lo = np.empty((x.shape[0], y.shape[0]))
    for i in range(x.shape[0]):
        lo[i] = np.minimum(x[i], y).sum(axis=1)
    hi = sx[:, None] + sy[None, :] - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
    return sim


def stack_dense(fps: Sequence[Fingerprint]) -> np.ndarray:
    """Dense matrix of fingerprints restricted to columns used by any of them."""
    if not fps:
        return np.zeros((0, 0))
    cols = sorted(set().union(*(fp.data.keys() for fp in fps)))
    index = {c: i for i, c in enumerate(cols)}
    out = np.zeros((len(fps), len(cols)))
    for r, fp in enumerate(fps):
        for pos, c in fp.data.items():
            out[r, index[pos]] = c
    return out
