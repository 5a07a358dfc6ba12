"""Synthetic practice logs from three BKT-family generators.

* ``bkt2``   - classic two-state knowledge tracing (unlearned / learned).
* ``bkt3``   - unlearned / practicing / fluent, no direct unlearned->fluent jump.
* ``bkt_fs`` - two-state BKT plus "failure sequences": a minority of
  students who, on some KCs, answer i.i.d. with a low success rate.

The emission at attempt 1 uses the sampled initial state; the latent
chain transitions after every attempt.

Randomness is split into independent ``SeedSequence`` sub-streams keyed by
purpose and student index, so per-student generation is order-free and a
``bkt_fs`` run with ``p_fs_student = 0`` reproduces ``bkt2`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np

from .dataset import AttemptRecord, Dataset, canonicalize
from .errors import ParameterError

GENERATORS = ("bkt2", "bkt3", "bkt_fs")

# Sub-stream tags.
_PARAMS, _STUDENT, _FS_STUDENT, _FS_ENGAGE, _FS_EMIT = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class PopulationConfig:
    n_kcs: int = 50
    n_students: int = 3500
    kc_mean: float = 5.0
    attempts_mean: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.n_kcs < 1 or self.n_students < 1:
            raise ParameterError("n_kcs and n_students must be positive")
        if self.kc_mean <= 0 or self.attempts_mean <= 0:
            raise ParameterError("kc_mean and attempts_mean must be positive")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PopulationConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def student_id(i: int) -> str:
    return f"S{i + 1:05d}"


def kc_id(j: int) -> str:
    return f"KC{j + 1:03d}"


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class Bkt2Params:
    pi: np.ndarray            # P(learned before attempt 1)
    learn: np.ndarray         # P(unlearned -> learned) after each attempt
    guess: np.ndarray         # P(correct | unlearned)
    correct_learned: np.ndarray  # P(correct | learned) = 1 - slip

    @classmethod
    def sample(cls, n_kcs: int, rng: np.random.Generator) -> "Bkt2Params":
        return cls(
            pi=rng.beta(1.0, 2.0, n_kcs),
            learn=rng.beta(2.0, 2.0, n_kcs),
            guess=rng.uniform(0.02, 0.3, n_kcs),
            correct_learned=rng.uniform(0.7, 0.98, n_kcs),
        )


@dataclass
class Bkt3Params:
    pi_unlearned: np.ndarray   # P(start unlearned); the rest start practicing
    stay_unlearned: np.ndarray  # L11
    stay_practicing: np.ndarray  # L22
    c_unlearned: np.ndarray
    c_practicing: np.ndarray
    c_fluent: np.ndarray

    @classmethod
    def sample(cls, n_kcs: int, rng: np.random.Generator) -> "Bkt3Params":
        return cls(
            pi_unlearned=rng.beta(2.0, 2.0, n_kcs),
            stay_unlearned=rng.beta(2.0, 2.0, n_kcs),
            stay_practicing=rng.beta(2.0, 2.0, n_kcs),
            c_unlearned=rng.uniform(0.02, 0.2, n_kcs),
            c_practicing=rng.uniform(0.4, 0.7, n_kcs),
            c_fluent=rng.uniform(0.85, 1.0, n_kcs),
        )

    def transition_matrix(self, j: int) -> np.ndarray:
        l11, l22 = self.stay_unlearned[j], self.stay_practicing[j]
        return np.array([[l11, 1 - l11, 0.0], [0.0, l22, 1 - l22], [0.0, 0.0, 1.0]])


@dataclass
class BktFsParams:
    bkt: Bkt2Params
    engage: np.ndarray            # B_j: P(FS-student engages on KC j)
    p_fs_student: float = 0.08
    p_correct_during_fs: float = 0.2

    def __post_init__(self):
        for name in ("p_fs_student", "p_correct_during_fs"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must be a probability, got {v}")

    @classmethod
    def sample(cls, n_kcs: int, rng: np.random.Generator, engage_rng: np.random.Generator,
               p_fs_student: float = 0.08, p_correct_during_fs: float = 0.2) -> "BktFsParams":
        return cls(Bkt2Params.sample(n_kcs, rng), engage_rng.uniform(0.0, 1.0, n_kcs),
                   p_fs_student, p_correct_during_fs)


@dataclass
class LatentRow:
    student_id: str
    kc_id: str
    t: int
    state: int  # 1 = unlearned, 2 = learned/practicing, 3 = fluent; 0 = FS mode


@dataclass
class SimulationResult:
    dataset: Dataset
    params: Any
    generator: str
    config: PopulationConfig
    empty_students: tuple[str, ...] = ()
    latent: list[LatentRow] = field(default_factory=list)
    fs_students: tuple[str, ...] = ()
    fs_sequences: tuple[tuple[str, str], ...] = ()


def sample_population(config: PopulationConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Draw one student's practiced KCs and attempt counts.

    J ~ min(K, Poisson(kc_mean)) KCs without replacement, each practiced
    max(Poisson(attempts_mean), 2) times. Returns (kc_index, O_ij) pairs.
    """
    n_kc = min(config.n_kcs, int(rng.poisson(config.kc_mean)))
    kcs = rng.choice(config.n_kcs, size=n_kc, replace=False) if n_kc else np.empty(0, dtype=int)
    counts = np.maximum(rng.poisson(config.attempts_mean, size=n_kc), 2)
    return [(int(j), int(o)) for j, o in zip(kcs, counts)]


def _bkt2_sequence(rng, j, n, params: Bkt2Params):
    learned = rng.random() < params.pi[j]
    xs, zs = [], []
    for _ in range(n):
        p = params.correct_learned[j] if learned else params.guess[j]
        xs.append(int(rng.random() < p))
        zs.append(2 if learned else 1)
        if not learned and rng.random() < params.learn[j]:
            learned = True
    return xs, zs


def _bkt3_sequence(rng, j, n, params: Bkt3Params):
    state = 1 if rng.random() < params.pi_unlearned[j] else 2
    emit = (None, params.c_unlearned[j], params.c_practicing[j], params.c_fluent[j])
    stay = (None, params.stay_unlearned[j], params.stay_practicing[j], 1.0)
    xs, zs = [], []
    for _ in range(n):
        xs.append(int(rng.random() < emit[state]))
        zs.append(state)
        if state < 3 and rng.random() >= stay[state]:
            state += 1
    return xs, zs


def _resolve_params(generator: str, config: PopulationConfig, params, fs_overrides: Mapping[str, float]):
    if params is not None:
        return params
    rng = _stream(config.seed, _PARAMS, 0)
    if generator == "bkt2":
        return Bkt2Params.sample(config.n_kcs, rng)
    if generator == "bkt3":
        return Bkt3Params.sample(config.n_kcs, rng)
    return BktFsParams.sample(config.n_kcs, rng, _stream(config.seed, _PARAMS, 1), **fs_overrides)


def run_generator(generator: str, config: PopulationConfig, params=None, *,
                  emit_latent: bool = False, **fs_overrides: float) -> SimulationResult:
    """Generate a dataset plus its latent bookkeeping.

    ``params`` overrides the per-KC parameter draw; ``fs_overrides`` may set
    ``p_fs_student`` / ``p_correct_during_fs`` when the FS parameters are
    sampled.
    """
    if generator not in GENERATORS:
        raise ParameterError(f"unknown generator {generator!r}; expected one of {GENERATORS}")
    params = _resolve_params(generator, config, params, fs_overrides)
    records: list[AttemptRecord] = []
    latent: list[LatentRow] = []
    empty, fs_students, fs_seqs = [], [], []
    for i in range(config.n_students):
        sid = student_id(i)
        rng = _stream(config.seed, _STUDENT, i)
        plan = sample_population(config, rng)
        if not plan:
            empty.append(sid)
            continue
        fs_student = False
        if generator == "bkt_fs":
            fs_student = _stream(config.seed, _FS_STUDENT, i).random() < params.p_fs_student
            if fs_student:
                fs_students.append(sid)
                engage_rng = _stream(config.seed, _FS_ENGAGE, i)
                emit_rng = _stream(config.seed, _FS_EMIT, i)
        for j, n in plan:
            kid = kc_id(j)
            # Bernoulli draws keep consuming the student's stream even on FS
            # sequences so the non-FS sequences match plain bkt2 draw-for-draw.
            if generator == "bkt3":
                xs, zs = _bkt3_sequence(rng, j, n, params)
            else:
                bkt = params if generator == "bkt2" else params.bkt
                xs, zs = _bkt2_sequence(rng, j, n, bkt)
                if fs_student and engage_rng.random() < params.engage[j]:
                    fs_seqs.append((sid, kid))
                    xs = [int(u < params.p_correct_during_fs) for u in emit_rng.random(n)]
                    zs = [0] * n
            for t, x in enumerate(xs, start=1):
                records.append(AttemptRecord(sid, kid, x, opportunity=t))
            if emit_latent:
                latent.extend(LatentRow(sid, kid, t, z) for t, z in enumerate(zs, start=1))
    return SimulationResult(
        dataset=canonicalize(records), params=params, generator=generator, config=config,
        empty_students=tuple(empty), latent=latent,
        fs_students=tuple(fs_students), fs_sequences=tuple(fs_seqs),
    )


def simulate_bkt2(config: PopulationConfig, params: Bkt2Params | None = None, seed: int | None = None) -> Dataset:
    return run_generator("bkt2", _with_seed(config, seed), params).dataset


def simulate_bkt3(config: PopulationConfig, params: Bkt3Params | None = None, seed: int | None = None) -> Dataset:
    return run_generator("bkt3", _with_seed(config, seed), params).dataset


def simulate_bkt_fs(config: PopulationConfig, params: BktFsParams | None = None, seed: int | None = None,
                    **fs_overrides: float) -> Dataset:
    return run_generator("bkt_fs", _with_seed(config, seed), params, **fs_overrides).dataset


def _with_seed(config: PopulationConfig, seed: int | None) -> PopulationConfig:
    if seed is None:
        return config
    return PopulationConfig(config.n_kcs, config.n_students, config.kc_mean, config.attempts_mean, seed)


def params_to_dict(params) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    return conv(asdict(params))


def load_sim_config(path: str) -> dict:
    """Read a JSON simulation config: PopulationConfig fields plus optional
    ``generator``, ``p_fs_student`` and ``p_correct_during_fs``."""
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
