"""Round-by-round protocol simulation.

This is the readable reference path: one :class:`RoundTranscript` per round,
with Alice's secret preparation kept apart from the public announcements.
The Monte Carlo experiments use the array engine in :mod:`sqrs.engine`,
which is checked against this module statistically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import adversary
from .adversary import AttackStrategy, EveRoundKnowledge
from .inference import Observation
from .qstate import (
    TWO_PI,
    Basis,
    PrepKind,
    ProbePreparation,
    canonical,
    sample_ghz,
    sample_separable,
)


@dataclass(frozen=True)
class ProtocolParams:
    n_bobs: int
    n_rounds: int
    p_separable: float
    p_fidelity: float

    def __post_init__(self):
        if self.n_bobs < 1:
            raise ValueError("n_bobs must be positive")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be positive")
        for name in ("p_separable", "p_fidelity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def p_entangled(self) -> float:
        return 1.0 - self.p_separable

    @property
    def p_measure(self) -> float:
        return 1.0 - self.p_fidelity


@dataclass(frozen=True)
class TrueParameters:
    phis: tuple[float, ...]

    @property
    def theta(self) -> float:
        return canonical(math.fsum(self.phis))

    @classmethod
    def random(cls, n_bobs: int, rng: np.random.Generator) -> "TrueParameters":
        return cls(tuple(float(v) for v in rng.uniform(0.0, TWO_PI, n_bobs)))


@dataclass(frozen=True)
class BobRecord:
    """What a Bob announces on the public channel."""

    applied_phase: bool
    basis: Basis
    outcome: int


@dataclass
class RoundTranscript:
    preparation: ProbePreparation = field(repr=False)  # Alice only
    bob_records: tuple[BobRecord, ...]
    attack_record: EveRoundKnowledge | None = None
    detected: bool = False

    def public_view(self) -> tuple[BobRecord, ...]:
        return self.bob_records

    def eve_view(self) -> tuple[tuple[BobRecord, ...], EveRoundKnowledge | None]:
        return self.bob_records, self.attack_record


def prepare_round(params: ProtocolParams, rng: np.random.Generator) -> ProbePreparation:
    if rng.random() < params.p_separable:
        phases = tuple(int(k) for k in rng.integers(0, 4, params.n_bobs))
        return ProbePreparation(PrepKind.SEPARABLE, phases)
    return ProbePreparation(PrepKind.ENTANGLED, (int(rng.integers(0, 4)),))


def measure_round(
    delivered: ProbePreparation,
    phis: Sequence[float],
    applied: Sequence[bool],
    bases: Sequence[Basis],
    rng: np.random.Generator,
) -> list[int]:
    """Outcomes of the Bobs on whatever state actually reached them."""
    phases = [phi if a else None for phi, a in zip(phis, applied)]
    if delivered.kind is PrepKind.SEPARABLE:
        return [
            sample_separable(chi, phase, basis, rng)
            for chi, phase, basis in zip(delivered.angles, phases, bases)
        ]
    return sample_ghz(delivered.angles[0], phases, bases, rng)


def run_round(
    params: ProtocolParams,
    truth: TrueParameters,
    attack: AttackStrategy | None,
    rng: np.random.Generator,
) -> RoundTranscript:
    if len(truth.phis) != params.n_bobs:
        raise ValueError("one true phase per Bob is required")
    prep = prepare_round(params, rng)
    delivered, knowledge = prep, None
    if attack is not None and rng.random() < attack.attack_probability:
        delivered, knowledge = adversary.intercept(prep, attack, rng, params.n_bobs)

    applied = [bool(rng.random() < params.p_measure) for _ in range(params.n_bobs)]
    bases = [Basis(int(rng.integers(0, 2))) for _ in range(params.n_bobs)]
    outcomes = measure_round(delivered, truth.phis, applied, bases, rng)

    transcript = RoundTranscript(
        preparation=prep,
        bob_records=tuple(BobRecord(a, b, o) for a, b, o in zip(applied, bases, outcomes)),
        attack_record=knowledge,
    )
    transcript.detected = alice_verify(transcript)
    return transcript


def _predicted(phase_quarters: int) -> int:
    # only called when the state is an eigenstate of the measured basis
    return 1 if phase_quarters % 4 == 0 else -1


def alice_verify(transcript: RoundTranscript) -> bool:
    """True if any same-basis fidelity check contradicts Alice's preparation.

    Cross-basis checks are random by design and never count as detections.
    """
    prep, records = transcript.preparation, transcript.bob_records
    if prep.kind is PrepKind.SEPARABLE:
        for chi, rec in zip(prep.phases, records):
            total = chi + int(rec.basis)
            if not rec.applied_phase and total % 2 == 0 and rec.outcome != _predicted(total):
                return True
        return False

    if any(rec.applied_phase for rec in records):
        return False
    total = prep.phases[0] + sum(int(rec.basis) for rec in records)
    if total % 2 != 0:
        return False
    return math.prod(rec.outcome for rec in records) != _predicted(total)


def run_protocol(
    params: ProtocolParams,
    truth: TrueParameters,
    attack: AttackStrategy | None,
    stop_on_detection: bool,
    rng: np.random.Generator,
) -> list[RoundTranscript]:
    transcripts = []
    for _ in range(params.n_rounds):
        transcript = run_round(params, truth, attack, rng)
        transcripts.append(transcript)
        if stop_on_detection and transcript.detected:
            break
    return transcripts


def round_observations(
    prep: ProbePreparation, records: Sequence[BobRecord]
) -> list[Observation]:
    """Likelihood-ready evidence from announcements about a known preparation.

    Separable probes give one observation per Bob that applied a phase;
    GHZ probes give a single parity observation on the sum of the applied
    phases (the other Bobs only contribute their basis phases).
    """
    if prep.kind is PrepKind.SEPARABLE:
        return [
            Observation(1 << b, chi + int(rec.basis), rec.outcome)
            for b, (chi, rec) in enumerate(zip(prep.phases, records))
            if rec.applied_phase
        ]
    key = sum(1 << b for b, rec in enumerate(records) if rec.applied_phase)
    if key == 0:
        return []
    offset = prep.phases[0] + sum(int(rec.basis) for rec in records)
    return [Observation(key, offset, math.prod(rec.outcome for rec in records))]


def alice_observations(transcripts: Iterable[RoundTranscript]) -> list[Observation]:
    """Alice's evidence; the round on which she detects Eve is left out."""
    out: list[Observation] = []
    for t in transcripts:
        if not t.detected:
            out.extend(round_observations(t.preparation, t.bob_records))
    return out


# Line-delimited JSON, one object per round, keys in this order:
# round_index, prep_kind, prep_phases, bobs ([applied, basis, outcome] per Bob),
# detected, attack (null, or resent_kind / resent_phases / eve_bases / eve_outcomes).
TRANSCRIPT_FIELDS = ("round_index", "prep_kind", "prep_phases", "bobs", "detected", "attack")


def transcript_to_record(index: int, t: RoundTranscript) -> dict:
    attack = None
    if t.attack_record is not None:
        k = t.attack_record
        attack = {
            "resent_kind": k.resent_preparation.kind.value,
            "resent_phases": list(k.resent_preparation.phases),
            "eve_bases": None if k.measured_bases is None else [b.name for b in k.measured_bases],
            "eve_outcomes": None if k.measured_outcomes is None else list(k.measured_outcomes),
        }
    return {
        "round_index": index,
        "prep_kind": t.preparation.kind.value,
        "prep_phases": list(t.preparation.phases),
        "bobs": [[r.applied_phase, r.basis.name, r.outcome] for r in t.bob_records],
        "detected": t.detected,
        "attack": attack,
    }


def transcript_from_record(record: dict) -> RoundTranscript:
    attack = record.get("attack")
    knowledge = None
    if attack is not None:
        knowledge = EveRoundKnowledge(
            resent_preparation=ProbePreparation(
                PrepKind(attack["resent_kind"]), tuple(attack["resent_phases"])
            ),
            measured_bases=None
            if attack["eve_bases"] is None
            else tuple(Basis[b] for b in attack["eve_bases"]),
            measured_outcomes=None
            if attack["eve_outcomes"] is None
            else tuple(attack["eve_outcomes"]),
        )
    return RoundTranscript(
        preparation=ProbePreparation(PrepKind(record["prep_kind"]), tuple(record["prep_phases"])),
        bob_records=tuple(BobRecord(bool(a), Basis[b], int(o)) for a, b, o in record["bobs"]),
        attack_record=knowledge,
        detected=bool(record["detected"]),
    )


def write_transcripts(path: str | Path, transcripts: Sequence[RoundTranscript]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, t in enumerate(transcripts):
            fh.write(json.dumps(transcript_to_record(i, t)) + "\n")


def read_transcripts(path: str | Path) -> list[RoundTranscript]:
    with open(path, encoding="utf-8") as fh:
        return [transcript_from_record(json.loads(line)) for line in fh if line.strip()]
