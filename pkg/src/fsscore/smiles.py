"""A small SMILES reader/writer covering the subset needed for scoring.

Supported: organic-subset and bracket atoms for H, B, C, N, O, F, Si, P, S,
Cl, Se, Br, I; aromatic lowercase atoms; branches; ring closures (digits and
``%nn``); bond symbols ``- = # :``; tetrahedral ``@``/``@@``; ``.``
separated components.

Rejected: isotopes are parsed and dropped, ``/`` and ``\\`` are read as plain
single bonds (E/Z is not represented), wildcard ``*``, quadruple bond ``$``,
reaction arrows and any stereo class other than ``@``/``@@``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Sequence

ALLOWED_ELEMENTS = ("H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I")

# normal valences of the organic subset, lowest first
_ORGANIC_VALENCE = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}
_AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_AROMATIC_BRACKET = {**_AROMATIC_ORGANIC, "se": "Se"}
_ELEMENT_INDEX = {e: i for i, e in enumerate(ALLOWED_ELEMENTS)}

_BRACKET_RE = re.compile(
    r"(?P<iso>\d+)?"
    r"(?P<sym>se|as|te|[bcnops]|[A-Z][a-z]?|\*)"
    r"(?P<chiral>@@?(?:TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<h>H\d?)?"
    r"(?P<charge>\+\d+|-\d+|\++|-+)?"
    r"(?::\d+)?$"
)


class SmilesError(ValueError):
    """Base class for every parse failure."""


class SmilesSyntaxError(SmilesError):
    pass


class UnsupportedElementError(SmilesError):
    pass


class ValenceError(SmilesError):
    pass


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> int:
        return 1 if self is BondOrder.AROMATIC else int(self)


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}

STEREO_FLIP = {"@": "@@", "@@": "@"}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    hydrogens: int = 0
    aromatic: bool = False
    stereo: str | None = None
    bracket: bool = False
    # neighbour order the parity refers to; -1 stands for the implicit H
    stereo_ref: tuple[int, ...] = ()
    in_ring: bool = False
    degree: int = 0

    @property
    def explicit_h(self) -> int | None:
        return self.hydrogens if self.bracket else None

    @property
    def implicit_h(self) -> int:
        return 0 if self.bracket else self.hydrogens

    @property
    def is_heavy(self) -> bool:
        return self.element != "H"


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder
    in_ring: bool = False
    conjugated: bool = False

    def other(self, idx: int) -> int:
        return self.end if idx == self.begin else self.begin


@dataclass(frozen=True)
class Molecule:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per atom, ``(neighbour, bond index)`` pairs in bond order."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for k, b in enumerate(self.bonds):
            adj[b.begin].append((b.end, k))
            adj[b.end].append((b.begin, k))
        return tuple(tuple(a) for a in adj)

    def bond_between(self, i: int, j: int) -> Bond | None:
        for nbr, k in self.adjacency[i]:
            if nbr == j:
                return self.bonds[k]
        return None

    @property
    def n_stereo(self) -> int:
        return sum(a.stereo is not None for a in self.atoms)

    def permute(self, order: Sequence[int]) -> "Molecule":
        """Return the same molecule with atom ``order[k]`` moved to position ``k``."""
        if sorted(order) != list(range(len(self.atoms))):
            raise ValueError("order must be a permutation of atom indices")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = []
        for old in order:
            a = self.atoms[old]
            ref = tuple(-1 if r < 0 else new_index[r] for r in a.stereo_ref)
            atoms.append(replace(a, stereo_ref=ref))
        bonds = []
        for b in self.bonds:
            u, v = new_index[b.begin], new_index[b.end]
            bonds.append(replace(b, begin=min(u, v), end=max(u, v)))
        bonds.sort(key=lambda b: (b.begin, b.end))
        return Molecule(tuple(atoms), tuple(bonds), self.source)


# ---------------------------------------------------------------------------
# parsing


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    if len(text) > 1 and text[1:].isdigit():
        mag = int(text[1:])
    else:
        mag = len(text)
    return mag if text[0] == "+" else -mag


def _parse_bracket(body: str, pos: int) -> dict:
    m = _BRACKET_RE.match(body)
    if m is None:
        raise SmilesSyntaxError(f"malformed bracket atom [{body}] at position {pos}")
    sym = m.group("sym")
    if sym == "*":
        raise SmilesSyntaxError(f"wildcard atom not supported at position {pos}")
    aromatic = sym[0].islower()
    if aromatic:
        if sym not in _AROMATIC_BRACKET:
            raise UnsupportedElementError(f"unsupported aromatic element '{sym}' at position {pos}")
        element = _AROMATIC_BRACKET[sym]
    else:
        element = sym
    if element not in _ELEMENT_INDEX:
        raise UnsupportedElementError(f"unsupported element '{element}' at position {pos}")
    chiral = m.group("chiral")
    if chiral and chiral not in ("@", "@@"):
        raise SmilesSyntaxError(f"stereo class '{chiral}' not supported at position {pos}")
    h = m.group("h")
    hcount = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    charge = _parse_charge(m.group("charge"))
    if not -4 <= charge <= 4:
        raise SmilesSyntaxError(f"formal charge {charge} outside [-4, 4] at position {pos}")
    return dict(element=element, charge=charge, hydrogens=hcount, aromatic=aromatic,
                stereo=chiral or None, bracket=True)


def _organic_hydrogens(element: str, aromatic: bool, valence_sum: int) -> int | None:
    """Implicit H for an organic-subset atom, ``None`` if no valence fits."""
    valences = _ORGANIC_VALENCE[element]
    if aromatic:
        if valence_sum > valences[-1]:
            return None
        return max(0, valences[0] - valence_sum - 1)
    for v in valences:
        if v >= valence_sum:
            return v - valence_sum
    return None


def parse_smiles(text: str) -> Molecule:
    """Parse ``text`` into a :class:`Molecule`.

    Raises a :class:`SmilesError` subclass on empty input, syntax errors,
    elements outside :data:`ALLOWED_ELEMENTS` and valence violations.
    """
    if not isinstance(text, str) or not text.strip():
        raise SmilesSyntaxError("empty SMILES")
    text = text.strip()
    if not text.isascii():
        raise SmilesSyntaxError("non-ASCII character in SMILES")
    if ">" in text:
        raise SmilesSyntaxError("reaction SMILES not supported")

    specs: list[dict] = []
    nbrs: list[list[int | None]] = []  # neighbour order as written, None = open ring slot
    raw_bonds: list[tuple[int, int, str | None]] = []
    rings: dict[int, tuple[int, str | None, int]] = {}
    branch_stack: list[int] = []
    prev: int | None = None
    pending: str | None = None
    i, n = 0, len(text)

    def add_atom(spec: dict, pos: int) -> None:
        nonlocal prev, pending
        idx = len(specs)
        specs.append(spec)
        nbrs.append([])
        if prev is not None:
            raw_bonds.append((prev, idx, pending))
            nbrs[prev].append(idx)
            nbrs[idx].append(prev)
        elif pending is not None:
            raise SmilesSyntaxError(f"bond without a preceding atom at position {pos}")
        if spec["stereo"] and spec["hydrogens"] > 0:
            nbrs[idx].append(-1)
        prev = idx
        pending = None

    while i < n:
        ch = text[i]
        if ch == "[":
            close = text.find("]", i)
            if close < 0:
                raise SmilesSyntaxError(f"unclosed bracket atom at position {i}")
            add_atom(_parse_bracket(text[i + 1:close], i), i)
            i = close + 1
            continue
        two = text[i:i + 2]
        if two in ("Cl", "Br"):
            add_atom(dict(element=two, charge=0, hydrogens=0, aromatic=False, stereo=None,
                          bracket=False), i)
            i += 2
            continue
        if ch in _ORGANIC_VALENCE:
            add_atom(dict(element=ch, charge=0, hydrogens=0, aromatic=False, stereo=None,
                          bracket=False), i)
            i += 1
            continue
        if ch in _AROMATIC_ORGANIC:
            add_atom(dict(element=_AROMATIC_ORGANIC[ch], charge=0, hydrogens=0, aromatic=True,
                          stereo=None, bracket=False), i)
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesSyntaxError(f"two consecutive bond symbols at position {i}")
            if prev is None:
                raise SmilesSyntaxError(f"bond without a preceding atom at position {i}")
            pending = ch
            i += 1
            continue
        if ch == "(":
            if prev is None:
                raise SmilesSyntaxError(f"branch without a preceding atom at position {i}")
            if pending is not None:
                raise SmilesSyntaxError(f"bond symbol before branch at position {i}")
            branch_stack.append(prev)
            i += 1
            if i < n and text[i] == ")":
                raise SmilesSyntaxError(f"empty branch at position {i}")
            continue
        if ch == ")":
            if not branch_stack:
                raise SmilesSyntaxError(f"unbalanced ')' at position {i}")
            if pending is not None:
                raise SmilesSyntaxError(f"dangling bond before ')' at position {i}")
            prev = branch_stack.pop()
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if ch == "%":
                digits = text[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError(f"malformed ring label at position {i}")
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise SmilesSyntaxError(f"ring closure without an atom at position {i}")
            if label in rings:
                other, sym, slot = rings.pop(label)
                if other == prev:
                    raise SmilesSyntaxError(f"ring closure to the same atom at position {i}")
                if prev in nbrs[other] or other in nbrs[prev]:
                    raise SmilesSyntaxError(f"duplicate bond via ring closure at position {i}")
                if sym is not None and pending is not None and _BOND_SYMBOLS[sym] != _BOND_SYMBOLS[pending]:
                    raise SmilesSyntaxError(f"conflicting ring bond symbols at position {i}")
                raw_bonds.append((other, prev, sym if sym is not None else pending))
                nbrs[other][slot] = prev
                nbrs[prev].append(other)
            else:
                rings[label] = (prev, pending, len(nbrs[prev]))
                nbrs[prev].append(None)
            pending = None
            i += width
            continue
        if ch == ".":
            if prev is None or pending is not None or branch_stack:
                raise SmilesSyntaxError(f"misplaced '.' at position {i}")
            prev = None
            i += 1
            continue
        if ch in "*$":
            raise SmilesSyntaxError(f"unsupported construct '{ch}' at position {i}")
        if ch.isalpha():
            raise UnsupportedElementError(f"unsupported element or symbol '{ch}' at position {i}")
        raise SmilesSyntaxError(f"unexpected character '{ch}' at position {i}")

    if branch_stack:
        raise SmilesSyntaxError("unbalanced '(' (unclosed branch)")
    if rings:
        raise SmilesSyntaxError(f"unclosed ring bond(s) {sorted(rings)}")
    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of SMILES")

    bonds: list[tuple[int, int, BondOrder]] = []
    for u, v, sym in raw_bonds:
        if sym is None:
            order = BondOrder.AROMATIC if specs[u]["aromatic"] and specs[v]["aromatic"] else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[sym]
        bonds.append((min(u, v), max(u, v), order))

    valence = [0] * len(specs)
    for u, v, order in bonds:
        valence[u] += order.valence
        valence[v] += order.valence
    for idx, spec in enumerate(specs):
        if spec["bracket"]:
            continue
        h = _organic_hydrogens(spec["element"], spec["aromatic"], valence[idx])
        if h is None:
            raise ValenceError(
                f"valence violation on atom {idx} ({spec['element']}, bond order sum {valence[idx]})"
            )
        spec["hydrogens"] = h

    return _assemble(specs, nbrs, bonds, text)


def _assemble(specs, nbrs, bonds, source) -> Molecule:
    n = len(specs)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (u, v, _) in enumerate(bonds):
        adj[u].append((v, k))
        adj[v].append((u, k))
    ring_bond = _ring_bonds(n, adj, len(bonds))
    conj = _conjugated_bonds([s_["element"] for s_ in specs], adj, bonds)
    atom_ring = [any(ring_bond[k] for _, k in adj[i]) for i in range(n)]
    atoms = []
    for idx, spec in enumerate(specs):
        ref = tuple(r for r in nbrs[idx] if r is not None) if spec["stereo"] else ()
        atoms.append(Atom(element=spec["element"], charge=spec["charge"], hydrogens=spec["hydrogens"],
                          aromatic=spec["aromatic"], stereo=spec["stereo"], bracket=spec["bracket"],
                          stereo_ref=ref, in_ring=atom_ring[idx], degree=len(adj[idx])))
    out_bonds = tuple(Bond(u, v, order, ring_bond[k], conj[k]) for k, (u, v, order) in enumerate(bonds))
    return Molecule(tuple(atoms), out_bonds, source)


def _ring_bonds(n: int, adj, n_bonds: int) -> list[bool]:
    """A bond is a ring bond iff it is not a bridge (iterative Tarjan)."""
    in_ring = [True] * n_bonds
    disc = [-1] * n
    low = [0] * n
    t = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = t
        t += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, via, it = stack[-1]
            advanced = False
            for w, k in it:
                if k == via:
                    continue
                if disc[w] < 0:
                    disc[w] = low[w] = t
                    t += 1
                    stack.append((w, k, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if advanced:
                continue
            stack.pop()
            if stack:
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[v])
                if low[v] > disc[parent]:
                    in_ring[via] = False
    return in_ring


def _conjugated_bonds(elements: Sequence[str], adj, bonds) -> list[bool]:
    # heuristic: aromatic bonds, single bonds joining two unsaturated atoms or an
    # unsaturated atom and an N/O/S lone-pair donor, and the multiple bonds they touch
    n = len(elements)
    unsat = [False] * n
    for u, v, order in bonds:
        if order != BondOrder.SINGLE:
            unsat[u] = unsat[v] = True
    donor = [elements[i] in ("N", "O", "S") and not unsat[i] for i in range(n)]
    conj = [order == BondOrder.AROMATIC for _, _, order in bonds]
    for k, (u, v, order) in enumerate(bonds):
        if order != BondOrder.SINGLE:
            continue
        if (unsat[u] and (unsat[v] or donor[v])) or (unsat[v] and donor[u]):
            conj[k] = True
    for k, (u, v, order) in enumerate(bonds):
        if order in (BondOrder.DOUBLE, BondOrder.TRIPLE):
            if any(conj[j] for a in (u, v) for _, j in adj[a] if j != k and bonds[j][2] == BondOrder.SINGLE):
                conj[k] = True
    return conj


# ---------------------------------------------------------------------------
# writing and canonicalisation


def _permutation_parity(ref: Sequence[int], out: Sequence[int]) -> int | None:
    """0 if ``out`` is an even reordering of ``ref``, 1 if odd, None if not comparable."""
    if sorted(ref) != sorted(out):
        return None
    pool = list(ref)
    positions = []
    for x in out:
        k = pool.index(x)
        positions.append(k)
        pool[k] = object()  # consume duplicates left to right
    inversions = sum(1 for a in range(len(positions)) for b in range(a + 1, len(positions))
                     if positions[a] > positions[b])
    return inversions % 2


def _needs_bracket(atom: Atom, valence_sum: int) -> bool:
    if atom.charge or atom.stereo or atom.element not in _ORGANIC_VALENCE:
        return True
    if atom.aromatic and atom.element.lower() not in _AROMATIC_ORGANIC:
        return True
    return _organic_hydrogens(atom.element, atom.aromatic, valence_sum) != atom.hydrogens


def _atom_token(atom: Atom, bracket: bool, stereo: str | None) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    if not bracket:
        return sym
    out = "[" + sym
    if stereo:
        out += stereo
    if atom.hydrogens:
        out += "H" + (str(atom.hydrogens) if atom.hydrogens > 1 else "")
    if atom.charge:
        mag = abs(atom.charge)
        out += ("+" if atom.charge > 0 else "-") + (str(mag) if mag > 1 else "")
    return out + "]"


def _bond_token(mol: Molecule, bond: Bond) -> str:
    both_aromatic = mol.atoms[bond.begin].aromatic and mol.atoms[bond.end].aromatic
    if bond.order == BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if bond.order == BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return "=" if bond.order == BondOrder.DOUBLE else "#"


def _ring_label(d: int) -> str:
    return str(d) if d < 10 else f"%{d:02d}"


def write_smiles(mol: Molecule, ranks: Sequence[int]) -> str:
    """Serialise ``mol`` by depth-first traversal ordered by ``ranks`` (lowest first).

    Any rank vector gives a valid SMILES for the same molecule; canonical
    ranks give the canonical form, random ranks give random rewritings.
    """
    n = len(mol.atoms)
    adj = mol.adjacency
    valence = [sum(mol.bonds[k].order.valence for _, k in adj[i]) for i in range(n)]
    visited = [False] * n
    parent = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_open: list[list[tuple[int, int]]] = [[] for _ in range(n)]  # (partner, bond)
    ring_close: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    preorder: list[int] = []
    roots: list[int] = []
    used_bond = [False] * len(mol.bonds)

    for root in sorted(range(n), key=lambda a: ranks[a]):
        if visited[root]:
            continue
        roots.append(root)
        visited[root] = True
        preorder.append(root)
        stack = [(root, iter(sorted(adj[root], key=lambda e: ranks[e[0]])))]
        while stack:
            v, it = stack[-1]
            for w, k in it:
                if used_bond[k]:
                    continue
                used_bond[k] = True
                if visited[w]:
                    # w is an ancestor still on the stack: ring closure
                    ring_open[w].append((v, k))
                    ring_close[v].append((w, k))
                    continue
                visited[w] = True
                parent[w] = v
                children[v].append(w)
                preorder.append(w)
                stack.append((w, iter(sorted(adj[w], key=lambda e: ranks[e[0]]))))
                break
            else:
                stack.pop()

    pos = {a: i for i, a in enumerate(preorder)}
    free_labels: list[int] = []
    next_label = 1
    label_of: dict[int, int] = {}
    pieces: list[str] = []

    def emit(root: int) -> str:
        nonlocal next_label
        out: list[str] = []
        # iterative emission; stack entries are atoms or literal tokens
        todo: list[int | str] = [root]
        while todo:
            item = todo.pop()
            if isinstance(item, str):
                out.append(item)
                continue
            v = item
            tokens: list[str] = []
            order_out: list[int] = []
            if parent[v] >= 0:
                order_out.append(parent[v])
            atom = mol.atoms[v]
            bracket = _needs_bracket(atom, valence[v])
            if atom.stereo and atom.hydrogens > 0:
                order_out.append(-1)
            closing = sorted(ring_close[v], key=lambda e: pos[e[0]])
            opening = sorted(ring_open[v], key=lambda e: ranks[e[0]])
            for w, k in opening:
                if free_labels:
                    free_labels.sort()
                    lab = free_labels.pop(0)
                else:
                    lab = next_label
                    next_label += 1
                label_of[k] = lab
            ring_tokens = []
            freed = []
            for w, k in closing:
                lab = label_of.pop(k)
                ring_tokens.append(_ring_label(lab))
                order_out.append(w)
                freed.append(lab)
            for w, k in opening:
                ring_tokens.append(_bond_token(mol, mol.bonds[k]) + _ring_label(label_of[k]))
                order_out.append(w)
            free_labels.extend(freed)
            order_out.extend(children[v])
            stereo = atom.stereo
            if stereo:
                parity = _permutation_parity(atom.stereo_ref, order_out)
                if parity is None:
                    stereo = None
                elif parity:
                    stereo = STEREO_FLIP[stereo]
                    bracket = True
            tokens.append(_atom_token(atom, bracket or bool(stereo), stereo))
            tokens.extend(ring_tokens)
            out.append("".join(tokens))
            kids = children[v]
            # push in reverse so the first child is processed first
            for idx in range(len(kids) - 1, -1, -1):
                w = kids[idx]
                btok = _bond_token(mol, mol.bond_between(v, w))
                if idx < len(kids) - 1:
                    todo.append(")")
                    todo.append(w)
                    todo.append("(" + btok)
                else:
                    todo.append(w)
                    todo.append(btok)
        return "".join(out)

    for root in roots:
        pieces.append(emit(root))
    return ".".join(pieces)


def _dense_rank(keys: Sequence) -> list[int]:
    distinct = sorted(set(keys))
    lookup = {k: i for i, k in enumerate(distinct)}
    return [lookup[k] for k in keys]


def _refine(mol: Molecule, ranks: list[int]) -> list[int]:
    adj = mol.adjacency
    while True:
        keys = [
            (ranks[i], tuple(sorted((int(mol.bonds[k].order), ranks[j]) for j, k in adj[i])))
            for i in range(len(ranks))
        ]
        new = _dense_rank(keys)
        if len(set(new)) == len(set(ranks)):
            return new
        ranks = new


def _initial_invariants(mol: Molecule) -> list[tuple]:
    return [
        (_ELEMENT_INDEX[a.element], a.charge, a.degree, a.hydrogens, a.aromatic, a.stereo is not None)
        for a in mol.atoms
    ]


_BRANCH_BUDGET = 64


def canonical_ranks(mol: Molecule) -> list[int]:
    """Canonical atom ranks by iterated neighbourhood refinement.

    Remaining ties are broken on the lowest tied class; while the search stays
    within a small budget every member of the class is tried and the ranking
    giving the smallest string wins, otherwise the lowest index is taken.
    """
    start = _refine(mol, _dense_rank(_initial_invariants(mol)))
    best: tuple[str, list[int]] | None = None

    def search(ranks: list[int], width: int) -> None:
        nonlocal best
        ranks = _refine(mol, ranks)
        if len(set(ranks)) == len(ranks):
            text = write_smiles(mol, ranks)
            if best is None or text < best[0]:
                best = (text, ranks)
            return
        counts: dict[int, list[int]] = {}
        for i, r in enumerate(ranks):
            counts.setdefault(r, []).append(i)
        tied = min(r for r, members in counts.items() if len(members) > 1)
        members = counts[tied]
        branch = members if width * len(members) <= _BRANCH_BUDGET else members[:1]
        for chosen in branch:
            broken = [2 * r + (1 if (r == tied and i != chosen) else 0) for i, r in enumerate(ranks)]
            search(broken, width * len(branch))

    search(start, 1)
    assert best is not None
    return best[1]


def canonical_form(mol: Molecule) -> str:
    """Deterministic SMILES, invariant to the atom order of the input."""
    if not mol.atoms:
        return ""
    return write_smiles(mol, canonical_ranks(mol))


def canonicalize(text: str) -> str:
    return canonical_form(parse_smiles(text))


def random_smiles(mol: Molecule, rng) -> str:
    """A valid rewriting of ``mol`` with a random traversal order."""
    ranks = list(rng.permutation(len(mol.atoms)))
    return write_smiles(mol, ranks)


def strip_stereo(mol: Molecule) -> Molecule:
    atoms = tuple(replace(a, stereo=None, stereo_ref=()) for a in mol.atoms)
    return Molecule(atoms, mol.bonds, mol.source)


def heavy_atom_count(mol: Molecule) -> int:
    return sum(a.is_heavy for a in mol.atoms)


def elements(mol: Molecule) -> set[str]:
    return {a.element for a in mol.atoms}


def has_stereo(mol: Molecule) -> bool:
    return any(a.stereo for a in mol.atoms)


def parse_many(texts: Iterable[str]) -> list[Molecule]:
    return [parse_smiles(t) for t in texts]
