"""Prior-practice predictors for every attempt.

For opportunity t of a sequence X_1..X_O (all sums over prior attempts only):

    T = t - 1
    S = sum_{p<t} d_s**(t-1-p) * X_p
    F = sum_{p<t} d_f**(t-1-p) * (1 - X_p)          (negated under "paper_literal")
    R = sum_{p<t} d_r**(t-p) * X_p / sum_{p<t} d_r**(t-p)

R's sums start ``ghost_count`` attempts before t = 1; the ghosts are
incorrect, so they add weight to the denominator only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterator, Sequence

import numpy as np

from .dataset import Dataset, PracticeSequence
from .errors import ParameterError, UndefinedRatioError

NONNEG_COUNT = "nonneg_count"
PAPER_LITERAL = "paper_literal"
FAILURE_SIGNS = (NONNEG_COUNT, PAPER_LITERAL)


def _check_decay(d: float, name: str = "decay") -> None:
    if not (0.0 < d <= 1.0):
        raise ParameterError(f"{name} must lie in (0, 1], got {d!r}")


@dataclass(frozen=True)
class FeatureConfig:
    decay_s: float = 1.0
    decay_f: float = 1.0
    decay_r: float = 1.0
    ghost_count: int = 3
    failure_sign: str = NONNEG_COUNT

    def __post_init__(self):
        _check_decay(self.decay_s, "decay_s")
        _check_decay(self.decay_f, "decay_f")
        _check_decay(self.decay_r, "decay_r")
        if int(self.ghost_count) != self.ghost_count or self.ghost_count < 0:
            raise ParameterError(f"ghost_count must be a non-negative integer, got {self.ghost_count!r}")
        if self.failure_sign not in FAILURE_SIGNS:
            raise ParameterError(f"failure_sign must be one of {FAILURE_SIGNS}, got {self.failure_sign!r}")

    def to_dict(self) -> dict:
        return {
            "decay_s": self.decay_s,
            "decay_f": self.decay_f,
            "decay_r": self.decay_r,
            "ghost_count": self.ghost_count,
            "failure_sign": self.failure_sign,
        }


@dataclass(frozen=True)
class FeatureRow:
    student_id: str
    kc_id: str
    t: int
    outcome: int
    T: int
    S: float
    F: float
    R: float


def _outcomes(sequence: PracticeSequence | Sequence[int]) -> Sequence[int]:
    return sequence.outcomes if isinstance(sequence, PracticeSequence) else sequence


def _check_t(outcomes: Sequence[int], t: int) -> None:
    if not (1 <= t <= len(outcomes)):
        raise IndexError(f"t={t} outside 1..{len(outcomes)}")


def total_count(sequence: PracticeSequence | Sequence[int], t: int) -> int:
    _check_t(_outcomes(sequence), t)
    return t - 1


def decayed_success_count(sequence: PracticeSequence | Sequence[int], t: int, d: float) -> float:
    xs = _outcomes(sequence)
    _check_t(xs, t)
    _check_decay(d)
    return float(sum(d ** (t - 1 - p) * xs[p - 1] for p in range(1, t)))


def decayed_failure_count(
    sequence: PracticeSequence | Sequence[int], t: int, d: float, sign: str = NONNEG_COUNT
) -> float:
    xs = _outcomes(sequence)
    _check_t(xs, t)
    _check_decay(d)
    if sign not in FAILURE_SIGNS:
        raise ParameterError(f"unknown failure sign {sign!r}")
    total = float(sum(d ** (t - 1 - p) * (1 - xs[p - 1]) for p in range(1, t)))
    return total if sign == NONNEG_COUNT else -total


def recency_weighted_proportion(
    sequence: PracticeSequence | Sequence[int], t: int, d: float, ghost_count: int = 3
) -> float:
    xs = _outcomes(sequence)
    _check_t(xs, t)
    _check_decay(d)
    if ghost_count < 0:
        raise ParameterError("ghost_count must be non-negative")
    num = 0.0
    den = 0.0
    for p in range(1 - ghost_count, t):
        w = d ** (t - p)
        den += w
        if p >= 1:
            num += w * xs[p - 1]
    if den == 0.0:
        raise UndefinedRatioError(f"no prior or ghost attempts at t={t}")
    return num / den


@dataclass(frozen=True)
class FeatureState:
    """Running accumulators for one (student, KC) stream.

    ``r_num``/``r_den`` already include the ghost attempts and the decay
    factor for the next emission, so R at the next attempt is their ratio.
    """

    s_accum: float
    f_accum: float
    r_num: float
    r_den: float
    t_next: int = 1

    @classmethod
    def initial(cls, config: FeatureConfig) -> "FeatureState":
        d = config.decay_r
        den = float(sum(d**k for k in range(1, config.ghost_count + 1)))
        return cls(0.0, 0.0, 0.0, den, 1)


def update_state(
    state: FeatureState,
    outcome: int,
    config: FeatureConfig,
    student_id: str = "",
    kc_id: str = "",
) -> tuple[FeatureState, FeatureRow]:
    """Emit the features for the pending attempt, then consume its outcome."""
    if outcome not in (0, 1):
        raise ParameterError(f"outcome must be 0 or 1, got {outcome!r}")
    if state.r_den == 0.0:
        raise UndefinedRatioError(f"no prior or ghost attempts at t={state.t_next}")
    f_val = state.f_accum if config.failure_sign == NONNEG_COUNT else -state.f_accum
    row = FeatureRow(
        student_id, kc_id, state.t_next, outcome,
        state.t_next - 1, state.s_accum, f_val, state.r_num / state.r_den,
    )
    d_r = config.decay_r
    new = FeatureState(
        s_accum=config.decay_s * state.s_accum + outcome,
        f_accum=config.decay_f * state.f_accum + (1 - outcome),
        r_num=d_r * (state.r_num + outcome),
        r_den=d_r * (state.r_den + 1.0),
        t_next=state.t_next + 1,
    )
    return new, row


class FeatureTable:
    """Column store of feature rows in canonical (student, kc, t) order.

    Iterating yields :class:`FeatureRow` objects; the numpy columns are what
    the design-matrix builder consumes.
    """

    def __init__(self, config, student_ids, kc_ids, student, kc, t, outcome, T, S, F, R):
        self.config = config
        self.student_ids = tuple(student_ids)
        self.kc_ids = tuple(kc_ids)
        self.student = np.asarray(student, dtype=np.int64)
        self.kc = np.asarray(kc, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.int64)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        self.T = np.asarray(T, dtype=np.int64)
        self.S = np.asarray(S, dtype=np.float64)
        self.F = np.asarray(F, dtype=np.float64)
        self.R = np.asarray(R, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> FeatureRow:
        return FeatureRow(
            self.student_ids[self.student[i]], self.kc_ids[self.kc[i]], int(self.t[i]),
            int(self.outcome[i]), int(self.T[i]), float(self.S[i]), float(self.F[i]), float(self.R[i]),
        )

    def __iter__(self) -> Iterator[FeatureRow]:
        for i in range(len(self)):
            yield self[i]

    def column(self, term: str) -> np.ndarray:
        return {"T": self.T, "S": self.S, "F": self.F, "R": self.R}[term]

    def subset(self, mask: np.ndarray) -> "FeatureTable":
        """Rows where ``mask`` is true; id enumerations are kept as-is."""
        return FeatureTable(
            self.config, self.student_ids, self.kc_ids, self.student[mask], self.kc[mask],
            self.t[mask], self.outcome[mask], self.T[mask], self.S[mask], self.F[mask], self.R[mask],
        )

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow], config: FeatureConfig) -> "FeatureTable":
        students = sorted({r.student_id for r in rows})
        kcs = sorted({r.kc_id for r in rows})
        s_idx = {s: i for i, s in enumerate(students)}
        k_idx = {k: i for i, k in enumerate(kcs)}
        return cls(
            config, students, kcs,
            [s_idx[r.student_id] for r in rows], [k_idx[r.kc_id] for r in rows],
            [r.t for r in rows], [r.outcome for r in rows], [r.T for r in rows],
            [r.S for r in rows], [r.F for r in rows], [r.R for r in rows],
        )


def featurize(dataset: Dataset, config: FeatureConfig) -> FeatureTable:
    """Compute T, S, F, R for every attempt of ``dataset``.

    Runs the same recurrences as :func:`update_state`, inlined for speed.
    """
    if config.ghost_count == 0 and dataset.n_attempts:
        raise UndefinedRatioError("ghost_count=0 leaves R undefined at t=1")
    d_s, d_f, d_r = config.decay_s, config.decay_f, config.decay_r
    sign = 1.0 if config.failure_sign == NONNEG_COUNT else -1.0
    den0 = FeatureState.initial(config).r_den
    s_idx = {s: i for i, s in enumerate(dataset.student_index)}
    k_idx = {k: i for i, k in enumerate(dataset.kc_index)}

    n = dataset.n_attempts
    student = np.empty(n, dtype=np.int64)
    kc = np.empty(n, dtype=np.int64)
    t_col = np.empty(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int8)
    S = np.empty(n)
    F = np.empty(n)
    R = np.empty(n)
    i = 0
    for seq in dataset.iter_sequences():
        si, ki = s_idx[seq.student_id], k_idx[seq.kc_id]
        s_acc = f_acc = r_num = 0.0
        r_den = den0
        for t, x in enumerate(seq.outcomes, start=1):
            student[i] = si
            kc[i] = ki
            t_col[i] = t
            out[i] = x
            S[i] = s_acc
            F[i] = sign * f_acc
            R[i] = r_num / r_den
            s_acc = d_s * s_acc + x
            f_acc = d_f * f_acc + (1 - x)
            r_num = d_r * (r_num + x)
            r_den = d_r * (r_den + 1.0)
            i += 1
    return FeatureTable(config, dataset.student_index, dataset.kc_index,
                        student, kc, t_col, out, t_col - 1, S, F, R)


def featurize_incremental(dataset: Dataset, config: FeatureConfig) -> list[FeatureRow]:
    """Streaming reference path: one :func:`update_state` call per attempt."""
    rows = []
    for seq in dataset.iter_sequences():
        state = FeatureState.initial(config)
        for x in seq.outcomes:
            state, row = update_state(state, x, config, seq.student_id, seq.kc_id)
            rows.append(row)
    return rows


def export_features(table: FeatureTable, destination: IO[str] | str) -> None:
    """CSV with a ``#`` header comment recording the feature configuration."""
    if isinstance(destination, str):
        with open(destination, "w", newline="", encoding="utf-8") as fh:
            export_features(table, fh)
        return
    cfg = table.config
    destination.write(
        f"# decay_s={cfg.decay_s!r} decay_f={cfg.decay_f!r} decay_r={cfg.decay_r!r} "
        f"ghost_count={cfg.ghost_count} failure_sign={cfg.failure_sign}\n"
    )
    writer = csv.writer(destination, lineterminator="\n")
    writer.writerow(["student", "kc", "t", "outcome", "T", "S", "F", "R"])
    for row in table:
        writer.writerow([row.student_id, row.kc_id, row.t, row.outcome, row.T,
                         repr(row.S), repr(row.F), repr(row.R)])
