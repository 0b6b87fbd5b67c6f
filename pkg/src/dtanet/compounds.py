"""Compound featurization: circular fingerprints and per-atom feature rows.

The fingerprint is the classic iterative circular construction: every atom
starts from a hashed invariant tuple, each round rehashes it with the sorted
(bond order, neighbor identifier) list, environments covering an already-seen
atom set are dropped in favour of the lowest-radius occurrence, and surviving
identifiers are folded modulo the bit length. Hashing is FNV-1a over the
values serialized as 64-bit little-endian two's-complement words, so bit
patterns are reproducible across platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .elements import atomic_number
from .smiles import MolGraph

__all__ = [
    "Fingerprint",
    "AtomFeatureMatrix",
    "FeaturizationError",
    "ECFP_ALLOWED_BITS",
    "DEFAULT_ATOM_VOCABULARY",
    "ecfp",
    "ecfp_identifiers",
    "tanimoto",
    "atom_features",
    "atom_feature_width",
]

ECFP_ALLOWED_BITS = (512, 1024, 2048, 4096)

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


class FeaturizationError(ValueError):
    pass


def _mix32(values: Iterable[int]) -> int:
    """FNV-1a over 64-bit little-endian two's-complement words, kept to 32 bits."""
    h = _FNV_OFFSET
    for value in values:
        for byte in struct.pack("<q", value):
            h ^= byte
            h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-length bit vector from circular-neighborhood hashing."""

    bits: np.ndarray  # uint8 0/1, length n_bits
    n_bits: int
    radius: int

    def popcount(self) -> int:
        return int(self.bits.sum())

    def to_hex(self) -> str:
        return bytes(np.packbits(self.bits)).hex()

    @classmethod
    def from_hex(cls, text: str, n_bits: int, radius: int) -> "Fingerprint":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        bits = np.unpackbits(raw)[:n_bits].astype(np.uint8)
        return cls(bits=bits, n_bits=n_bits, radius=radius)


def _initial_identifiers(graph: MolGraph) -> list[int]:
    ids = []
    for i, atom in enumerate(graph.atoms):
        ids.append(_mix32((
            atomic_number(atom.element),
            graph.degree(i),
            atom.hydrogens,
            atom.formal_charge,
            int(atom.aromatic),
            int(atom.ring_member),
        )))
    return ids


def ecfp_identifiers(graph: MolGraph, radius: int) -> tuple[int, ...]:
    """Surviving 32-bit substructure identifiers, sorted ascending.

    Duplicate substructures (identical covered atom sets) keep the occurrence
    with the lowest radius, then the lowest identifier.
    """
    if radius < 0:
        raise FeaturizationError("radius must be >= 0")
    if graph.n_atoms == 0:
        raise FeaturizationError("cannot fingerprint an empty molecule")
    ids = _initial_identifiers(graph)
    coverage: list[frozenset[int]] = [frozenset((i,)) for i in range(graph.n_atoms)]
    best: dict[frozenset[int], tuple[int, int]] = {}

    def register(atom_set: frozenset[int], r: int, identifier: int) -> None:
        seen = best.get(atom_set)
        if seen is None or (r, identifier) < seen:
            best[atom_set] = (r, identifier)

    for i in range(graph.n_atoms):
        register(coverage[i], 0, ids[i])
    for r in range(1, radius + 1):
        new_ids = []
        new_cov = []
        for i in range(graph.n_atoms):
            neighbors = sorted(
                (int(graph.bond_between(i, j).order), ids[j])
                for j in graph.adjacency[i]
            )
            payload = [r, ids[i]]
            for order_code, nbr_id in neighbors:
                payload.append(order_code)
                payload.append(nbr_id)
            new_ids.append(_mix32(payload))
            grown = set(coverage[i])
            for j in graph.adjacency[i]:
                grown |= coverage[j]
            new_cov.append(frozenset(grown))
        ids, coverage = new_ids, new_cov
        for i in range(graph.n_atoms):
            register(coverage[i], r, ids[i])
    return tuple(sorted({identifier for _, identifier in best.values()}))


def ecfp(graph: MolGraph, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """Fold the surviving identifiers of ``graph`` into an ``n_bits`` vector."""
    if n_bits not in ECFP_ALLOWED_BITS:
        raise FeaturizationError(f"n_bits must be one of {ECFP_ALLOWED_BITS}, got {n_bits}")
    bits = np.zeros(n_bits, dtype=np.uint8)
    for identifier in ecfp_identifiers(graph, radius):
        bits[identifier % n_bits] = 1
    return Fingerprint(bits=bits, n_bits=n_bits, radius=radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|, with two empty fingerprints counting as identical."""
    if a.n_bits != b.n_bits:
        raise FeaturizationError(
            f"fingerprint length mismatch: {a.n_bits} vs {b.n_bits}")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return inter / union


# Element vocabulary for the one-hot block of atom feature rows; symbols not
# listed fall into a shared "other" slot.
DEFAULT_ATOM_VOCABULARY = (
    "B", "Br", "C", "Ca", "Cl", "Cu", "F", "Fe", "I", "K",
    "Mg", "Mn", "N", "Na", "O", "P", "S", "Se", "Si", "Zn",
)

_MAX_H_ONEHOT = 4  # hydrogen counts above this share the last slot


def atom_feature_width(vocabulary: Sequence[str] = DEFAULT_ATOM_VOCABULARY,
                       max_degree: int = 6) -> int:
    # element one-hot + other, degree one-hot, H-count one-hot, charge,
    # aromatic flag, ring flag
    return (len(vocabulary) + 1) + (max_degree + 1) + (_MAX_H_ONEHOT + 1) + 3


@dataclass(frozen=True)
class AtomFeatureMatrix:
    """Per-atom initial feature rows plus the degree grouping used by
    convolution layers."""

    rows: np.ndarray  # float64, (n_atoms, width)
    width: int
    degree_slices: tuple[np.ndarray, ...]  # atom indices grouped by degree


def atom_features(graph: MolGraph,
                  vocabulary: Sequence[str] = DEFAULT_ATOM_VOCABULARY,
                  max_degree: int = 6) -> AtomFeatureMatrix:
    """Fixed-width feature row per atom.

    Layout: element one-hot over ``vocabulary`` plus an "other" slot, degree
    one-hot 0..max_degree, hydrogen-count one-hot 0..4, formal charge scalar,
    aromatic flag, ring flag.
    """
    vocab_index = {symbol: k for k, symbol in enumerate(vocabulary)}
    width = atom_feature_width(vocabulary, max_degree)
    rows = np.zeros((graph.n_atoms, width), dtype=np.float64)
    degrees = graph.degrees()
    for i, atom in enumerate(graph.atoms):
        d = degrees[i]
        if d > max_degree:
            raise FeaturizationError(
                f"atom {i} ({atom.element}) has degree {d}, "
                f"max supported is {max_degree}")
        offset = 0
        rows[i, vocab_index.get(atom.element, len(vocabulary))] = 1.0
        offset += len(vocabulary) + 1
        rows[i, offset + d] = 1.0
        offset += max_degree + 1
        rows[i, offset + min(atom.hydrogens, _MAX_H_ONEHOT)] = 1.0
        offset += _MAX_H_ONEHOT + 1
        rows[i, offset] = float(atom.formal_charge)
        rows[i, offset + 1] = 1.0 if atom.aromatic else 0.0
        rows[i, offset + 2] = 1.0 if atom.ring_member else 0.0
    slices = tuple(
        np.flatnonzero(np.asarray(degrees) == d) for d in range(max_degree + 1)
    )
    return AtomFeatureMatrix(rows=rows, width=width, degree_slices=slices)
