"""Practice-log ingestion and canonical per-(student, KC) sequences.

A log is a flat list of graded first attempts. Canonicalization groups the
attempts by (student, KC), orders each group, and renumbers the opportunity
index t = 1..O_ij so every downstream feature sees a gap-free history.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import EmptyInputError, OrderingError, ParseError, SchemaError, ValidationError

OrderKey = Union[float, str]

_TRUE_TOKENS = {"1", "1.0", "true", "t", "yes", "correct"}
_FALSE_TOKENS = {"0", "0.0", "false", "f", "no", "incorrect"}


@dataclass(frozen=True)
class AttemptRecord:
    """One graded first attempt by a student on a knowledge component."""

    student_id: str
    kc_id: str
    outcome: int
    opportunity: int | None = None
    order_key: OrderKey | None = None

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.outcome!r}")
        if self.opportunity is not None and self.opportunity < 1:
            raise ValueError(f"opportunity must be positive, got {self.opportunity}")


@dataclass(frozen=True)
class PracticeSequence:
    student_id: str
    kc_id: str
    outcomes: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class Dataset:
    """Canonical, immutable collection of practice sequences.

    ``records`` are sorted by (student, kc, t) and carry ``opportunity = t``.
    ``sequences`` maps ``(student_id, kc_id)`` to its ordered outcomes.
    """

    records: tuple[AttemptRecord, ...]
    sequences: Mapping[tuple[str, str], PracticeSequence]
    student_index: tuple[str, ...]
    kc_index: tuple[str, ...]

    @property
    def n_attempts(self) -> int:
        return len(self.records)

    @property
    def n_students(self) -> int:
        return len(self.student_index)

    @property
    def n_kcs(self) -> int:
        return len(self.kc_index)

    def iter_sequences(self) -> Iterable[PracticeSequence]:
        """Sequences in canonical (student, kc) order."""
        for key in sorted(self.sequences):
            yield self.sequences[key]

    def subset_students(self, student_ids: Iterable[str]) -> "Dataset":
        keep = set(student_ids)
        return canonicalize([r for r in self.records if r.student_id in keep])


@dataclass(frozen=True)
class ColumnSchema:
    """Maps logical fields to CSV header names."""

    student: str = "student"
    kc: str = "kc"
    outcome: str = "outcome"
    opportunity: str | None = "opportunity"
    order_key: str | None = None


@dataclass(frozen=True)
class Distribution:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Distribution":
        arr = np.asarray(values, dtype=float)
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        return cls(float(arr.min()), float(q1), float(med), float(q3), float(arr.max()), float(arr.mean()))


@dataclass(frozen=True)
class DatasetSummary:
    n_students: int
    n_kcs: int
    n_attempts: int
    kcs_per_student: Distribution
    attempts_per_student: Distribution
    attempts_per_kc: Distribution
    students_per_kc: Distribution
    percent_correct_per_kc: dict[str, float] = field(default_factory=dict)


def _sort_group(key: tuple[str, str], group: list[AttemptRecord]) -> list[AttemptRecord]:
    if len(group) == 1:
        return group
    if all(r.opportunity is not None for r in group):
        opps = [r.opportunity for r in group]
        if len(set(opps)) != len(opps):
            raise ValidationError(f"duplicate opportunity index in group {key}")
        return sorted(group, key=lambda r: r.opportunity)
    if all(r.order_key is not None for r in group):
        keys = [r.order_key for r in group]
        if len(set(keys)) != len(keys):
            raise OrderingError(f"tied order keys in group {key}")
        try:
            return sorted(group, key=lambda r: r.order_key)
        except TypeError as exc:
            raise OrderingError(f"incomparable order keys in group {key}") from exc
    raise OrderingError(
        f"group {key} has {len(group)} records but no complete opportunity or order_key column"
    )


def canonicalize(records: Iterable[AttemptRecord]) -> Dataset:
    """Group, order, and renumber attempts.

    Provided opportunity indices are used for ordering only; every group is
    renumbered 1..O_ij afterwards.
    """
    groups: dict[tuple[str, str], list[AttemptRecord]] = {}
    for rec in records:
        groups.setdefault((rec.student_id, rec.kc_id), []).append(rec)

    out_records: list[AttemptRecord] = []
    sequences: dict[tuple[str, str], PracticeSequence] = {}
    for key in sorted(groups):
        ordered = _sort_group(key, groups[key])
        for t, rec in enumerate(ordered, start=1):
            out_records.append(replace(rec, opportunity=t))
        sequences[key] = PracticeSequence(key[0], key[1], tuple(r.outcome for r in ordered))

    students = tuple(sorted({k[0] for k in sequences}))
    kcs = tuple(sorted({k[1] for k in sequences}))
    return Dataset(tuple(out_records), sequences, students, kcs)


def from_sequences(sequences: Mapping[tuple[str, str], Sequence[int]]) -> Dataset:
    """Build a dataset directly from ordered outcome lists."""
    records = [
        AttemptRecord(s, k, int(x), opportunity=t)
        for (s, k), outcomes in sequences.items()
        for t, x in enumerate(outcomes, start=1)
    ]
    return canonicalize(records)


def _parse_outcome(raw: str, row: int) -> int:
    token = raw.strip().lower()
    if token in _TRUE_TOKENS:
        return 1
    if token in _FALSE_TOKENS:
        return 0
    raise ParseError(row, f"outcome must be binary, got {raw!r}")


def _parse_order_keys(raw: list[str | None]) -> list[OrderKey | None]:
    present = [v for v in raw if v not in (None, "")]
    try:
        [float(v) for v in present]
    except ValueError:
        return [v if v not in (None, "") else None for v in raw]
    return [float(v) if v not in (None, "") else None for v in raw]


def ingest_csv(source: IO[bytes] | IO[str] | str, schema: ColumnSchema | None = None) -> Dataset:
    """Read a delimited practice log with a header row.

    ``source`` may be a binary or text stream, or a path. Row numbers in
    errors are 1-based data rows (the header is not counted).
    """
    schema = schema or ColumnSchema()
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return ingest_csv(fh, schema)
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8-sig")
    lines = [ln for ln in io.StringIO(text) if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    required = [schema.student, schema.kc, schema.outcome]
    for col in required:
        if col not in header:
            raise SchemaError(col)
    opp_col = schema.opportunity if schema.opportunity in header else None
    key_col = schema.order_key
    if key_col is not None and key_col not in header:
        raise SchemaError(key_col)

    rows = list(reader)
    order_keys = _parse_order_keys([r.get(key_col) for r in rows]) if key_col else [None] * len(rows)
    records = []
    seen: set[tuple[str, str, int]] = set()
    for offset, (row, okey) in enumerate(zip(rows, order_keys)):
        rownum = offset + 1
        student = (row.get(schema.student) or "").strip()
        kc = (row.get(schema.kc) or "").strip()
        if not student or not kc:
            raise ParseError(rownum, "empty student or kc id")
        outcome = _parse_outcome(row.get(schema.outcome) or "", rownum)
        opportunity = None
        if opp_col and (row.get(opp_col) or "").strip():
            try:
                opportunity = int(float(row[opp_col]))
            except ValueError as exc:
                raise ParseError(rownum, f"bad opportunity {row[opp_col]!r}") from exc
            if opportunity < 1:
                raise ParseError(rownum, f"opportunity must be positive, got {opportunity}")
            ident = (student, kc, opportunity)
            if ident in seen:
                raise ValidationError(f"row {rownum}: duplicate (student, kc, opportunity) {ident}")
            seen.add(ident)
        records.append(AttemptRecord(student, kc, outcome, opportunity, okey))
    return canonicalize(records)


def export_csv(dataset: Dataset, destination: IO[str] | str) -> None:
    """Write ``student,kc,opportunity,outcome`` rows in canonical order."""
    if isinstance(destination, str):
        with open(destination, "w", newline="", encoding="utf-8") as fh:
            export_csv(dataset, fh)
        return
    writer = csv.writer(destination, lineterminator="\n")
    writer.writerow(["student", "kc", "opportunity", "outcome"])
    for rec in dataset.records:
        writer.writerow([rec.student_id, rec.kc_id, rec.opportunity, rec.outcome])


def summarize(dataset: Dataset) -> DatasetSummary:
    if dataset.n_attempts == 0:
        raise EmptyInputError("cannot summarize an empty dataset")
    kcs_per_student: dict[str, int] = {}
    attempts_per_student: dict[str, int] = {}
    attempts_per_kc: dict[str, int] = {}
    students_per_kc: dict[str, int] = {}
    correct_per_kc: dict[str, int] = {}
    for (student, kc), seq in dataset.sequences.items():
        kcs_per_student[student] = kcs_per_student.get(student, 0) + 1
        attempts_per_student[student] = attempts_per_student.get(student, 0) + len(seq)
        attempts_per_kc[kc] = attempts_per_kc.get(kc, 0) + len(seq)
        students_per_kc[kc] = students_per_kc.get(kc, 0) + 1
        correct_per_kc[kc] = correct_per_kc.get(kc, 0) + sum(seq.outcomes)

    return DatasetSummary(
        n_students=dataset.n_students,
        n_kcs=dataset.n_kcs,
        n_attempts=sum(len(s) for s in dataset.sequences.values()),
        kcs_per_student=Distribution.of(list(kcs_per_student.values())),
        attempts_per_student=Distribution.of(list(attempts_per_student.values())),
        attempts_per_kc=Distribution.of(list(attempts_per_kc.values())),
        students_per_kc=Distribution.of(list(students_per_kc.values())),
        percent_correct_per_kc={kc: correct_per_kc[kc] / attempts_per_kc[kc] for kc in dataset.kc_index},
    )

