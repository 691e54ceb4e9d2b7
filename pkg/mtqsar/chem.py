# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Molecular graphs from SMILES, circular fingerprints and Tanimoto similarity.

The parser covers the practical subset of the Daylight grammar used by assay
tables: organic-subset atoms, bracket atoms with isotope, charge, explicit
hydrogens and atom class, bond symbols, branches, ring closures (``1``-``9``
and ``%nn``), aromatic lowercase atoms and disconnected components (``.``).
Stereo markers (``/``, ``\\``, ``@``) are accepted and ignored.

Fingerprints are ECFP-style: atom invariants are (atomic number, heavy degree,
total hydrogen count, formal charge, ring membership, aromaticity), refined
``radius`` times with the sorted (bond order, neighbour identifier) pairs and
folded modulo ``width``. Environments that cover an atom set already seen are
dropped. All hashing goes through :mod:`mtqsar.hashing` so bits are identical
across runs and platforms.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from .hashing import hash_ints
from .qsarerror import ChemError, SmilesError

logger = logging.getLogger(__name__)

SINGLE = 1
DOUBLE = 2
TRIPLE = 3
AROMATIC = 4

BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "/": SINGLE, "\\": SINGLE}

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBERS: Dict[str, int] = {symbol: number for number, symbol in enumerate(ELEMENTS, start=1)}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# allowed valences, lowest first
VALENCES: Dict[str, Tuple[int, ...]] = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

CHIRAL_CLASSES = ("TH", "AL", "SP", "TB", "OH")


@dataclass(frozen=True)
class Atom:
    symbol: str
    charge: int = 0
    explicit_h: int = 0
    aromatic: bool = False
    bracket: bool = False
    isotope: Optional[int] = None

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBERS[self.symbol]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: int = SINGLE

    @property
    def is_aromatic(self) -> bool:
        return self.order == AROMATIC


@dataclass(frozen=True)
class Molecule:
    """Parsed chemical graph.

    :param atoms: heavy (and explicitly written hydrogen) atoms in input order
    :param bonds: bonds between atom indices
    :param implicit_h: implicit hydrogen count per atom from the valence rules
    """

    atoms: Tuple[Atom, ...]
    bonds: Tuple[Bond, ...]
    implicit_h: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        pairs = set()
        for bond in self.bonds:
            if not (0 <= bond.begin < len(self.atoms) and 0 <= bond.end < len(self.atoms)):
                raise ChemError(message="bond endpoint out of range", code="InvalidBond")
            if bond.begin == bond.end:
                raise ChemError(message="self bond on atom " + str(bond.begin), code="InvalidBond")
            key = (min(bond.begin, bond.end), max(bond.begin, bond.end))
            if key in pairs:
                raise ChemError(message="duplicate bond " + str(key), code="InvalidBond")
            pairs.add(key)
        if not self.implicit_h:
            object.__setattr__(self, "implicit_h", tuple(0 for _ in self.atoms))
        if any(count < 0 for count in self.implicit_h):
            raise ChemError(message="negative implicit hydrogen count", code="ValenceViolation")

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def neighbors(self) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
        """Per atom: tuple of (neighbour index, bond order)."""
        adjacency: List[List[Tuple[int, int]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adjacency[bond.begin].append((bond.end, bond.order))
            adjacency[bond.end].append((bond.begin, bond.order))
        return tuple(tuple(entry) for entry in adjacency)

    def degree(self, index: int) -> int:
        return len(self.neighbors[index])

    def total_h(self, index: int) -> int:
        return self.atoms[index].explicit_h + self.implicit_h[index]

    @cached_property
    def ring_bonds(self) -> FrozenSet[int]:
        """Indices of bonds that lie on a cycle (i.e. are not bridges)."""
        return _ring_bonds(len(self.atoms), self.bonds)

    @cached_property
    def ring_atoms(self) -> FrozenSet[int]:
        atoms = set()
        for index in self.ring_bonds:
            atoms.add(self.bonds[index].begin)
            atoms.add(self.bonds[index].end)
        return frozenset(atoms)


def _ring_bonds(num_atoms: int, bonds: Sequence[Bond]) -> FrozenSet[int]:
    adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(num_atoms)]
    for index, bond in enumerate(bonds):
        adjacency[bond.begin].append((bond.end, index))
        adjacency[bond.end].append((bond.begin, index))

    discovered = [-1] * num_atoms
    low = [0] * num_atoms
    bridges = set()
    timer = 0
    for root in range(num_atoms):
        if discovered[root] != -1:
            continue
        discovered[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adjacency[root]))]
        while stack:
            node, parent_bond, pending = stack[-1]
            advanced = False
            for neighbor, bond_index in pending:
                if bond_index == parent_bond:
                    continue
                if discovered[neighbor] == -1:
                    discovered[neighbor] = low[neighbor] = timer
                    timer += 1
                    stack.append((neighbor, bond_index, iter(adjacency[neighbor])))
                    advanced = True
                    break
                low[node] = min(low[node], discovered[neighbor])
            if advanced:
                continue
            stack.pop()
            if stack:
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[node])
                if low[node] > discovered[parent]:
                    bridges.add(parent_bond)
    return frozenset(index for index in range(len(bonds)) if index not in bridges)


class _SmilesParser:
    """Single-pass SMILES reader. Offsets in errors are byte offsets."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.atoms: List[Atom] = []
        self.atom_offsets: List[int] = []
        self.bonds: List[Bond] = []
        self.bond_keys: set = set()
        self.prev: Optional[int] = None
        self.pending_bond: Optional[int] = None
        self.pending_offset = 0
        self.branches: List[Tuple[Optional[int], int, int]] = []
        self.rings: Dict[int, Tuple[int, Optional[int], int]] = {}
        self.after_dot = False

    def fail(self, code: str, message: str, offset: Optional[int] = None) -> SmilesError:
        where = self.pos if offset is None else offset
        return SmilesError(message=message + " at offset " + str(where), code=code, offset=where)

    def parse(self) -> Molecule:
        if not self.text:
            raise self.fail("EmptyInput", "empty SMILES", 0)
        for offset, char in enumerate(self.text):
            if ord(char) > 127:
                raise self.fail("UnexpectedCharacter", "non-ASCII character", offset)

        length = len(self.text)
        while self.pos < length:
            char = self.text[self.pos]
            if char == "(":
                self.open_branch()
            elif char == ")":
                self.close_branch()
            elif char in BOND_SYMBOLS:
                self.bond_symbol(char)
            elif char == ".":
                self.dot()
            elif char.isdigit() or char == "%":
                self.ring_closure()
            elif char == "[":
                self.bracket_atom()
            elif char.isalpha():
                self.organic_atom()
            elif char == "*":
                raise self.fail("UnknownAtomSymbol", "wildcard atoms are not supported")
            else:
                raise self.fail("UnexpectedCharacter", "unexpected character " + repr(char))

        if self.pending_bond is not None:
            raise self.fail("UnexpectedCharacter", "bond symbol without a following atom", self.pending_offset)
        if self.branches:
            raise self.fail("UnbalancedParenthesis", "unclosed branch", self.branches[-1][1])
        if self.rings:
            first = min(self.rings.values(), key=lambda item: item[2])
            raise self.fail("UnclosedRing", "ring bond never closed", first[2])
        if self.after_dot:
            raise self.fail("UnexpectedCharacter", "dot without a following atom", length - 1)
        if not self.atoms:
            raise self.fail("EmptyInput", "no atoms", 0)

        implicit = tuple(self.implicit_hydrogens(index) for index in range(len(self.atoms)))
        return Molecule(tuple(self.atoms), tuple(self.bonds), implicit)

    # ----- structure ----------------------------------------------------

    def open_branch(self) -> None:
        if self.prev is None or self.pending_bond is not None:
            raise self.fail("UnexpectedCharacter", "branch without a preceding atom")
        self.branches.append((self.prev, self.pos, len(self.atoms)))
        self.pos += 1

    def close_branch(self) -> None:
        if not self.branches:
            raise self.fail("UnbalancedParenthesis", "closing parenthesis without opening one")
        if self.pending_bond is not None:
            raise self.fail("UnexpectedCharacter", "bond symbol without a following atom", self.pending_offset)
        anchor, _, atom_count = self.branches.pop()
        if atom_count == len(self.atoms) or self.after_dot:
            raise self.fail("UnexpectedCharacter", "empty branch")
        self.prev = anchor
        self.pos += 1

    def bond_symbol(self, char: str) -> None:
        if self.prev is None or self.pending_bond is not None:
            raise self.fail("UnexpectedCharacter", "misplaced bond symbol " + repr(char))
        self.pending_bond = BOND_SYMBOLS[char]
        self.pending_offset = self.pos
        self.pos += 1

    def dot(self) -> None:
        if self.prev is None or self.pending_bond is not None:
            raise self.fail("UnexpectedCharacter", "misplaced dot")
        self.prev = None
        self.after_dot = True
        self.pos += 1

    def ring_closure(self) -> None:
        start = self.pos
        if self.prev is None:
            raise self.fail("UnexpectedCharacter", "ring bond without a preceding atom")
        if self.text[self.pos] == "%":
            digits = self.text[self.pos + 1:self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.fail("UnexpectedCharacter", "'%' must be followed by two digits")
            number = int(digits)
            self.pos += 3
        else:
            number = int(self.text[self.pos])
            self.pos += 1

        if number in self.rings:
            partner, order, _ = self.rings.pop(number)
            if order is not None and self.pending_bond is not None and order != self.pending_bond:
                raise self.fail("InvalidBond", "conflicting ring bond symbols", start)
            if self.pending_bond is not None:
                order = self.pending_bond
            if partner == self.prev:
                raise self.fail("InvalidBond", "ring bond from an atom to itself", start)
            self.add_bond(partner, self.prev, order, start)
        else:
            self.rings[number] = (self.prev, self.pending_bond, start)
        self.pending_bond = None

    # ----- atoms --------------------------------------------------------

    def organic_atom(self) -> None:
        start = self.pos
        two = self.text[self.pos:self.pos + 2]
        if two in ("Cl", "Br"):
            atom = Atom(two)
            self.pos += 2
        else:
            char = self.text[self.pos]
            if char in ORGANIC_SUBSET:
                atom = Atom(char)
            elif char in AROMATIC_ORGANIC:
                atom = Atom(char.upper(), aromatic=True)
            else:
                raise self.fail("UnknownAtomSymbol", "unknown atom symbol " + repr(char))
            self.pos += 1
        self.add_atom(atom, start)

    def bracket_atom(self) -> None:
        start = self.pos
        close = self.text.find("]", start)
        if close < 0:
            raise self.fail("UnexpectedCharacter", "unterminated bracket atom", start)
        body = self.text[start + 1:close]
        cursor = 0

        def at(offset: int) -> str:
            return body[offset] if offset < len(body) else ""

        digits = ""
        while at(cursor).isdigit():
            digits += at(cursor)
            cursor += 1
        isotope = int(digits) if digits else None

        aromatic = False
        symbol = ""
        for candidate in AROMATIC_BRACKET:
            if body.startswith(candidate, cursor):
                symbol = candidate[0].upper() + candidate[1:]
                aromatic = True
                cursor += len(candidate)
                break
        if not symbol:
            if not at(cursor).isupper():
                raise self.fail("UnknownAtomSymbol", "missing element symbol", start + 1 + cursor)
            if at(cursor + 1).islower() and (at(cursor) + at(cursor + 1)) in ATOMIC_NUMBERS:
                symbol = at(cursor) + at(cursor + 1)
                cursor += 2
            else:
                symbol = at(cursor)
                cursor += 1
            if symbol not in ATOMIC_NUMBERS:
                raise self.fail("UnknownAtomSymbol", "unknown element " + repr(symbol), start + 1)

        # chirality is accepted and ignored
        while at(cursor) == "@":
            cursor += 1
        if body[cursor:cursor + 2] in CHIRAL_CLASSES:
            cursor += 2
            while at(cursor).isdigit():
                cursor += 1

        explicit_h = 0
        if at(cursor) == "H":
            cursor += 1
            count = ""
            while at(cursor).isdigit():
                count += at(cursor)
                cursor += 1
            explicit_h = int(count) if count else 1

        charge = 0
        sign = at(cursor)
        if sign in ("+", "-"):
            unit = 1 if sign == "+" else -1
            cursor += 1
            count = ""
            while at(cursor).isdigit():
                count += at(cursor)
                cursor += 1
            if count:
                charge = unit * int(count)
            else:
                charge = unit
                while at(cursor) == sign:
                    charge += unit
                    cursor += 1

        if at(cursor) == ":":
            cursor += 1
            if not at(cursor).isdigit():
                raise self.fail("UnexpectedCharacter", "atom class needs digits", start + 1 + cursor)
            while at(cursor).isdigit():
                cursor += 1

        if cursor != len(body):
            raise self.fail("UnexpectedCharacter", "unexpected text in bracket atom", start + 1 + cursor)

        self.pos = close + 1
        self.add_atom(Atom(symbol, charge, explicit_h, aromatic, True, isotope), start)

    def add_atom(self, atom: Atom, offset: int) -> None:
        index = len(self.atoms)
        self.atoms.append(atom)
        self.atom_offsets.append(offset)
        if self.prev is not None:
            order = self.pending_bond
            self.add_bond(self.prev, index, order, offset)
        self.prev = index
        self.pending_bond = None
        self.after_dot = False

    def add_bond(self, first: int, second: int, order: Optional[int], offset: int) -> None:
        if order is None:
            both_aromatic = self.atoms[first].aromatic and self.atoms[second].aromatic
            order = AROMATIC if both_aromatic else SINGLE
        key = (min(first, second), max(first, second))
        if key in self.bond_keys:
            raise self.fail("InvalidBond", "duplicate bond between the same atoms", offset)
        self.bond_keys.add(key)
        self.bonds.append(Bond(first, second, order))

    # ----- valence ------------------------------------------------------

    def implicit_hydrogens(self, index: int) -> int:
        atom = self.atoms[index]
        plain = 0
        aromatic_bonds = 0
        for bond in self.bonds:
            if index in (bond.begin, bond.end):
                if bond.order == AROMATIC:
                    aromatic_bonds += 1
                else:
                    plain += bond.order
        used = plain + aromatic_bonds
        offset = self.atom_offsets[index]
        allowed = VALENCES.get(atom.symbol)

        if atom.bracket:
            if allowed is not None and used + atom.explicit_h > allowed[-1] + abs(atom.charge):
                raise self.fail("ValenceViolation", "too many bonds on " + atom.symbol, offset)
            return 0

        assert allowed is not None
        if atom.aromatic:
            # one extra bond's worth for the pi system unless the atom donates a lone pair
            if used + 1 <= allowed[0]:
                return allowed[0] - used - 1
            if used <= allowed[0]:
                return allowed[0] - used
        for valence in allowed:
            if valence >= used:
                return valence - used
        raise self.fail("ValenceViolation", "too many bonds on " + atom.symbol, offset)


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule`.

    :param text: the SMILES string (ASCII)
    :type text: string
    :return: the molecular graph
    :rtype: Molecule
    :raises SmilesError: with ``code`` one of ``EmptyInput``, ``UnclosedRing``,
        ``UnbalancedParenthesis``, ``UnknownAtomSymbol``, ``ValenceViolation``,
        ``UnexpectedCharacter``, ``InvalidBond`` and the byte ``offset``
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("ascii")
        except UnicodeDecodeError as ex:
            raise SmilesError(message="non-ASCII byte", code="UnexpectedCharacter", offset=ex.start)
    return _SmilesParser(text).parse()


@dataclass(frozen=True)
class Fingerprint:
    width: int
    bits: FrozenSet[int]

    def __post_init__(self) -> None:
        if any(bit < 0 or bit >= self.width for bit in self.bits):
            raise ChemError(message="bit index outside [0, width)", code="InvalidFingerprint")

    @property
    def popcount(self) -> int:
        return len(self.bits)

    def to_array(self) -> np.ndarray:
        row = np.zeros(self.width, dtype=np.uint8)
        if self.bits:
            row[sorted(self.bits)] = 1
        return row

    @classmethod
    def from_array(cls, row: np.ndarray) -> "Fingerprint":
        return cls(int(row.shape[0]), frozenset(int(bit) for bit in np.flatnonzero(row)))


def atom_invariant(mol: Molecule, index: int) -> Tuple[int, ...]:
    """Initial ECFP atom invariant as an integer tuple."""
    atom = mol.atoms[index]
    return (
        atom.atomic_number,
        mol.degree(index),
        mol.total_h(index),
        atom.charge,
        1 if index in mol.ring_atoms else 0,
        1 if atom.aromatic else 0,
    )


def circular_fingerprint(mol: Molecule, radius: int = 2, width: int = 1024) -> Fingerprint:
    """Compute a folded circular (ECFP-style) fingerprint.

    :param mol: the molecule
    :param radius: number of refinement iterations (2 gives ECFP4-like bits)
    :param width: number of bits, a power of two >= 64
    :return: the fingerprint
    :raises ChemError: ``InvalidParameter`` for a bad radius or width
    """
    if radius < 0:
        raise ChemError(message="radius must be >= 0", code="InvalidParameter")
    if width < 64 or width & (width - 1):
        raise ChemError(message="width must be a power of two >= 64", code="InvalidParameter")

    identifiers = [hash_ints(atom_invariant(mol, index)) for index in range(mol.num_atoms)]
    coverage = [frozenset([index]) for index in range(mol.num_atoms)]
    seen: set = set()
    kept: List[int] = []

    def keep(layer: Iterable[Tuple[FrozenSet[int], int]]) -> None:
        best: Dict[FrozenSet[int], int] = {}
        for atoms, identifier in layer:
            if atoms in seen:
                continue
            best[atoms] = min(best.get(atoms, identifier), identifier)
        seen.update(best)
        kept.extend(best.values())

    keep(zip(coverage, identifiers))
    for iteration in range(1, radius + 1):
        refined = []
        grown = []
        for index in range(mol.num_atoms):
            pairs = sorted((order, identifiers[nbr]) for nbr, order in mol.neighbors[index])
            values = [iteration, identifiers[index]]
            for order, identifier in pairs:
                values.append(order)
                values.append(identifier)
            refined.append(hash_ints(values))
            grown.append(coverage[index].union(*(coverage[nbr] for nbr, _ in mol.neighbors[index])))
        identifiers, coverage = refined, grown
        keep(zip(coverage, identifiers))

    return Fingerprint(width, frozenset(identifier % width for identifier in kept))


def featurize(smiles: str, radius: int = 2, width: int = 1024) -> Fingerprint:
    return circular_fingerprint(parse_smiles(smiles), radius, width)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Tanimoto similarity |a & b| / |a | b|; 0.0 when both are empty.

    :raises ChemError: ``WidthMismatch`` if the widths differ
    """
    if a.width != b.width:
        raise ChemError(message="fingerprint widths %d and %d differ" % (a.width, b.width), code="WidthMismatch")
    union = len(a.bits | b.bits)
    if union == 0:
        return 0.0
    return len(a.bits & b.bits) / union


def fingerprint_matrix(fingerprints: Sequence[Fingerprint], width: int) -> np.ndarray:
    """Stack fingerprints into an ``n x width`` uint8 matrix."""
    matrix = np.zeros((len(fingerprints), width), dtype=np.uint8)
    for row, fingerprint in enumerate(fingerprints):
        if fingerprint.width != width:
            raise ChemError(message="fingerprint width %d, expected %d" % (fingerprint.width, width),
                            code="WidthMismatch")
        if fingerprint.bits:
            matrix[row, sorted(fingerprint.bits)] = 1
    return matrix


def tanimoto_matrix(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """All-pairs Tanimoto similarity between the rows of two bit matrices.

    Same arithmetic as :func:`tanimoto` (exact integer counts, one float
    division), so entries equal the pairwise function bit for bit.
    """
    if first.shape[1] != second.shape[1]:
        raise ChemError(message="fingerprint widths differ", code="WidthMismatch")
    a = first.astype(np.int64)
    b = second.astype(np.int64)
    common = a @ b.T
    union = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - common
    similarity = np.zeros(common.shape, dtype=np.float64)
    np.divide(common, union, out=similarity, where=union > 0)
    return similarity
