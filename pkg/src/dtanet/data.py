"""Interaction-table ingestion, value transforms and sparsity filtering.

Input schema (CSV with header): ``smiles,protein_id,task_id,value``. The
compound is identified by its SMILES string. Protein sequences come from
a sequence table (see :mod:`dtanet.proteins`). Rows whose value field is
non-numeric, non-finite or inequality-prefixed (``>10000``, ``<0.5``) are
imprecise and dropped with a count; structurally broken rows count as
malformed and abort once they exceed the configured tolerance.

Responses are transformed as 4 - log10(raw), optionally after an exact-match
remap of one raw value onto another (used to pull a sentinel inactive
concentration closer to the active range). Duplicated (compound, protein,
task) observations are averaged after the transform.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import proteins
from .smiles import SmilesError, parse_smiles

__all__ = [
    "DataError",
    "InteractionRecord",
    "DatasetSummary",
    "PairDataset",
    "load_interactions",
    "transform_values",
    "inverse_transform",
    "filter_sparse",
    "oversample_minority",
    "assemble_pairs",
    "load_dataset",
]

log = logging.getLogger(__name__)

EXPECTED_HEADER = ["smiles", "protein_id", "task_id", "value"]


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    smiles: str
    protein_id: str
    task_id: int
    raw_value: float
    value: float | None = None  # filled by transform_values
    weight: float = 1.0


@dataclass
class DatasetSummary:
    n_compounds: int
    n_proteins: int
    n_pairs: int
    n_tasks: int
    per_task_counts: tuple[int, ...]
    discarded_imprecise: int = 0
    discarded_malformed: int = 0


def _is_imprecise(text: str) -> bool:
    stripped = text.strip()
    if stripped.startswith(">") or stripped.startswith("<"):
        return True
    try:
        value = float(stripped)
    except ValueError:
        return True
    return not np.isfinite(value)


def load_interactions(
    interactions_path: str | Path,
    sequences_path: str | Path,
    assay_map_path: str | Path | None = None,
    malformed_tolerance: int = 0,
) -> tuple[list[InteractionRecord], DatasetSummary, dict[str, tuple[str, bool]]]:
    """Read and eagerly validate an interaction table.

    Every distinct SMILES is parsed and every referenced protein must be in
    the sequence table; both fail fast with the offending row. Returns the
    records (raw values only), a summary, and the sequence table.
    """
    sequences = proteins.read_sequence_table(sequences_path)
    assay_map = _read_assay_map(assay_map_path) if assay_map_path else None
    records: list[InteractionRecord] = []
    imprecise = 0
    malformed: list[str] = []
    seen_smiles: set[str] = set()
    with open(interactions_path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != EXPECTED_HEADER:
            raise DataError(
                f"{interactions_path}: expected header "
                f"{','.join(EXPECTED_HEADER)!r}, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            problem = _row_problem(row, assay_map)
            if problem:
                malformed.append(f"line {lineno}: {problem}")
                continue
            smiles, protein_id, task_field, value_field = (f.strip() for f in row)
            if _is_imprecise(value_field):
                imprecise += 1
                continue
            if assay_map is not None:
                task_id = assay_map[task_field]
            else:
                task_id = int(task_field)
            if smiles not in seen_smiles:
                try:
                    parse_smiles(smiles)
                except SmilesError as exc:
                    raise DataError(
                        f"{interactions_path}: line {lineno}: bad SMILES: {exc}"
                    ) from exc
                seen_smiles.add(smiles)
            if protein_id not in sequences:
                raise DataError(
                    f"{interactions_path}: line {lineno}: no sequence for "
                    f"protein id {protein_id!r}")
            records.append(InteractionRecord(
                smiles=smiles, protein_id=protein_id, task_id=task_id,
                raw_value=float(value_field)))
    if len(malformed) > malformed_tolerance:
        raise DataError(
            f"{interactions_path}: {len(malformed)} malformed row(s), "
            f"tolerance {malformed_tolerance}; first: {malformed[0]}")
    if imprecise:
        log.info("discarded %d imprecise value row(s) from %s",
                 imprecise, interactions_path)
    summary = summarize(records)
    summary.discarded_imprecise = imprecise
    summary.discarded_malformed = len(malformed)
    return records, summary, sequences


def _row_problem(row: list[str], assay_map: dict[str, int] | None) -> str | None:
    if len(row) != 4:
        return f"expected 4 fields, got {len(row)}"
    smiles, protein_id, task_field, _ = (f.strip() for f in row)
    if not smiles:
        return "empty SMILES field"
    if not protein_id:
        return "empty protein_id field"
    if assay_map is not None:
        if task_field not in assay_map:
            return f"assay id {task_field!r} missing from the assay map"
        return None
    try:
        task = int(task_field)
    except ValueError:
        return f"task_id {task_field!r} is not an integer"
    if task < 0:
        return f"task_id {task} is negative"
    return None


def _read_assay_map(path: str | Path) -> dict[str, int]:
    mapping: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(
                    f"{path}:{lineno}: expected 'assay_id<TAB>task_id'")
            try:
                mapping[parts[0]] = int(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: task_id must be an integer") from exc
    return mapping


def summarize(records: list[InteractionRecord]) -> DatasetSummary:
    task_counts = Counter(r.task_id for r in records)
    n_tasks = (max(task_counts) + 1) if task_counts else 0
    return DatasetSummary(
        n_compounds=len({r.smiles for r in records}),
        n_proteins=len({r.protein_id for r in records}),
        n_pairs=len(records),
        n_tasks=n_tasks,
        per_task_counts=tuple(task_counts.get(t, 0) for t in range(n_tasks)),
    )


def transform_values(
    records: list[InteractionRecord],
    inactive_remap: tuple[float, float] | None = None,
) -> list[InteractionRecord]:
    """Apply the optional exact-match remap, then value -> 4 - log10(value)."""
    out = []
    for record in records:
        raw = record.raw_value
        if inactive_remap is not None and raw == inactive_remap[0]:
            raw = inactive_remap[1]
        if raw <= 0:
            raise DataError(
                f"non-positive raw value {record.raw_value} for "
                f"({record.smiles!r}, {record.protein_id!r})")
        out.append(replace(record, value=4.0 - np.log10(raw)))
    return out


def inverse_transform(value: float) -> float:
    """The raw response corresponding to a transformed value."""
    return float(10.0 ** (4.0 - value))


def filter_sparse(records: list[InteractionRecord],
                  min_obs: int) -> list[InteractionRecord]:
    """Drop compounds and proteins with at most ``min_obs`` observations.

    Removal can re-sparsify other entities, so the rule iterates to a fixed
    point. May return an empty list (logged).
    """
    if min_obs < 0:
        raise DataError("min_obs must be >= 0")
    current = list(records)
    while True:
        compound_counts = Counter(r.smiles for r in current)
        protein_counts = Counter(r.protein_id for r in current)
        dead_compounds = {c for c, n in compound_counts.items() if n <= min_obs}
        dead_proteins = {p for p, n in protein_counts.items() if n <= min_obs}
        if not dead_compounds and not dead_proteins:
            break
        current = [r for r in current
                   if r.smiles not in dead_compounds
                   and r.protein_id not in dead_proteins]
    if records and not current:
        log.warning("sparsity filter (min_obs=%d) removed every record", min_obs)
    return current


def oversample_minority(records: list[InteractionRecord],
                        target_fraction: float,
                        max_factor: int = 50) -> list[InteractionRecord]:
    """Replicate records away from the modal transformed value.

    Semantics: the modal value is the single most frequent transformed
    response; all other records are the minority. Minority records are
    replicated cyclically (deterministically, no randomness) until they make
    up at least ``target_fraction`` of the result, capped at ``max_factor``
    copies each. Requires transformed values.
    """
    if not 0.0 <= target_fraction < 1.0:
        raise DataError("target_fraction must be in [0, 1)")
    if any(r.value is None for r in records):
        raise DataError("oversampling requires transformed values")
    counts = Counter(r.value for r in records)
    if len(counts) < 2:
        return list(records)
    mode_value, _ = counts.most_common(1)[0]
    minority = [r for r in records if r.value != mode_value]
    majority_n = len(records) - len(minority)
    if not minority or len(minority) / len(records) >= target_fraction:
        return list(records)
    # smallest m with m*|minority| / (m*|minority| + |majority|) >= fraction
    needed = int(np.ceil(
        target_fraction * majority_n / (len(minority) * (1.0 - target_fraction))))
    factor = min(max(needed, 1), max_factor)
    out = list(records)
    for _ in range(factor - 1):
        out.extend(minority)
    if factor == max_factor and needed > max_factor:
        log.warning("oversampling capped at factor %d (needed %d)",
                    max_factor, needed)
    return out


@dataclass
class PairDataset:
    """Assembled multi-task view: one row per (compound, protein) pair."""

    compounds: tuple[str, ...]
    protein_ids: tuple[str, ...]
    sequences: dict[str, tuple[str, bool]]
    pairs: np.ndarray  # (n_pairs, 2) [compound index, protein index]
    y: np.ndarray      # (n_pairs, n_tasks) transformed values, 0 where masked
    w: np.ndarray      # (n_pairs, n_tasks) 0/1 mask
    n_tasks: int

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]

    def summary(self) -> DatasetSummary:
        per_task = tuple(int(self.w[:, t].sum()) for t in range(self.n_tasks))
        return DatasetSummary(
            n_compounds=len(self.compounds),
            n_proteins=len(self.protein_ids),
            n_pairs=int(self.w.sum()),
            n_tasks=self.n_tasks,
            per_task_counts=per_task,
        )

    def observed_values(self) -> np.ndarray:
        return self.y[self.w > 0]


def assemble_pairs(records: list[InteractionRecord],
                   sequences: dict[str, tuple[str, bool]],
                   n_tasks: int | None = None) -> PairDataset:
    """Group records by (compound, protein); duplicates average post-transform."""
    if not records:
        raise DataError("cannot assemble an empty record list")
    if any(r.value is None for r in records):
        raise DataError("records must be transformed before assembly")
    max_task = max(r.task_id for r in records)
    if n_tasks is None:
        n_tasks = max_task + 1
    elif max_task >= n_tasks:
        raise DataError(f"task id {max_task} outside 0..{n_tasks - 1}")
    compounds: list[str] = []
    compound_index: dict[str, int] = {}
    protein_ids: list[str] = []
    protein_index: dict[str, int] = {}
    cell_values: dict[tuple[int, int, int], list[float]] = defaultdict(list)
    for record in records:
        ci = compound_index.setdefault(record.smiles, len(compounds))
        if ci == len(compounds):
            compounds.append(record.smiles)
        pi = protein_index.setdefault(record.protein_id, len(protein_ids))
        if pi == len(protein_ids):
            protein_ids.append(record.protein_id)
        cell_values[(ci, pi, record.task_id)].append(record.value)
    pair_rows: dict[tuple[int, int], int] = {}
    pair_list: list[tuple[int, int]] = []
    for (ci, pi, _task) in cell_values:
        if (ci, pi) not in pair_rows:
            pair_rows[(ci, pi)] = len(pair_list)
            pair_list.append((ci, pi))
    y = np.zeros((len(pair_list), n_tasks))
    w = np.zeros((len(pair_list), n_tasks))
    for (ci, pi, task), values in cell_values.items():
        row = pair_rows[(ci, pi)]
        y[row, task] = float(np.mean(values))
        w[row, task] = 1.0
    missing = [p for p in protein_ids if p not in sequences]
    if missing:
        raise DataError(f"no sequence for protein id {missing[0]!r}")
    return PairDataset(
        compounds=tuple(compounds),
        protein_ids=tuple(protein_ids),
        sequences={p: sequences[p] for p in protein_ids},
        pairs=np.array(pair_list, dtype=np.int64).reshape(len(pair_list), 2),
        y=y,
        w=w,
        n_tasks=n_tasks,
    )


def load_dataset(
    interactions_path: str | Path,
    sequences_path: str | Path,
    assay_map_path: str | Path | None = None,
    min_obs: int = 0,
    inactive_remap: tuple[float, float] | None = None,
    oversample_fraction: float = 0.0,
    malformed_tolerance: int = 0,
    n_tasks: int | None = None,
) -> PairDataset:
    """Full ingestion chain: load, transform, filter, optionally oversample."""
    records, _, sequences = load_interactions(
        interactions_path, sequences_path, assay_map_path, malformed_tolerance)
    records = transform_values(records, inactive_remap)
    if min_obs > 0:
        records = filter_sparse(records, min_obs)
        if not records:
            raise DataError(
                f"sparsity filter min_obs={min_obs} removed every record")
    if oversample_fraction > 0.0:
        records = oversample_minority(records, oversample_fraction)
    return assemble_pairs(records, sequences, n_tasks=n_tasks)
