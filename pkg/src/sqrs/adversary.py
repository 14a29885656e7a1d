"""Eve's attacks on the quantum channel and what she learns from the public one.

Four strategies: resend a random separable or GHZ state without measuring
(replace), or measure every intercepted qubit in a random basis and resend
her best guess as separable states or as a GHZ state (measure-and-resend).

Measure-and-resend guess rule: each measured qubit is replaced by the
eigenstate of Eve's basis that matches her result. This is the unique
maximum-likelihood guess for a separable qubit, and for a GHZ probe the sum
of those per-qubit phases is the unique maximum-likelihood net phase given
her parity. When her (net) basis matches Alice's the guess is exact;
otherwise it is one of the two other-basis states, chosen by her random
result.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .inference import Observation
from .qstate import Basis, PrepKind, ProbePreparation, sample_ghz, sample_separable

if TYPE_CHECKING:
    from .protocol import BobRecord, ProtocolParams

# per-check contradiction probabilities for replace and measure-resend
D_REPLACE = 0.5
D_MEASURE_RESEND = 0.25


class AttackKind(str, enum.Enum):
    REPLACE_SEPARABLE = "replace-separable"
    REPLACE_ENTANGLED = "replace-entangled"
    MEASURE_RESEND_SEPARABLE = "measure-resend-separable"
    MEASURE_RESEND_ENTANGLED = "measure-resend-entangled"

    @property
    def measures(self) -> bool:
        return self in (AttackKind.MEASURE_RESEND_SEPARABLE, AttackKind.MEASURE_RESEND_ENTANGLED)

    @property
    def resend_kind(self) -> PrepKind:
        if self in (AttackKind.REPLACE_SEPARABLE, AttackKind.MEASURE_RESEND_SEPARABLE):
            return PrepKind.SEPARABLE
        return PrepKind.ENTANGLED


@dataclass(frozen=True)
class AttackStrategy:
    kind: AttackKind
    attack_probability: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ValueError("attack_probability must lie in [0, 1]")


@dataclass(frozen=True)
class EveRoundKnowledge:
    resent_preparation: ProbePreparation
    measured_bases: tuple[Basis, ...] | None = None
    measured_outcomes: tuple[int, ...] | None = None


def _n_qubits(prep: ProbePreparation, n_bobs: int | None) -> int:
    if prep.kind is PrepKind.SEPARABLE:
        return len(prep.phases)
    if n_bobs is None:
        raise ValueError("n_bobs is required to intercept a GHZ probe")
    return n_bobs


def intercept(
    prep: ProbePreparation,
    strategy: AttackStrategy,
    rng: np.random.Generator,
    n_bobs: int | None = None,
) -> tuple[ProbePreparation, EveRoundKnowledge]:
    """Return the state Eve forwards to the Bobs and her private record."""
    n = _n_qubits(prep, n_bobs)
    kind = strategy.kind

    if not kind.measures:
        if kind.resend_kind is PrepKind.SEPARABLE:
            resent = ProbePreparation(PrepKind.SEPARABLE, tuple(int(k) for k in rng.integers(0, 4, n)))
        else:
            resent = ProbePreparation(PrepKind.ENTANGLED, (int(rng.integers(0, 4)),))
        return resent, EveRoundKnowledge(resent)

    bases = tuple(Basis(int(b)) for b in rng.integers(0, 2, n))
    if prep.kind is PrepKind.SEPARABLE:
        outcomes = tuple(
            sample_separable(chi, None, basis, rng) for chi, basis in zip(prep.angles, bases)
        )
    else:
        outcomes = tuple(sample_ghz(prep.angles[0], [None] * n, bases, rng))

    guesses = tuple((-int(b) + (0 if o == 1 else 2)) % 4 for b, o in zip(bases, outcomes))
    if kind.resend_kind is PrepKind.SEPARABLE:
        resent = ProbePreparation(PrepKind.SEPARABLE, guesses)
    else:
        resent = ProbePreparation(PrepKind.ENTANGLED, (sum(guesses) % 4,))
    return resent, EveRoundKnowledge(resent, bases, outcomes)


def eve_observe(
    bob_records: Sequence["BobRecord"], knowledge: EveRoundKnowledge | None
) -> list[Observation]:
    """Evidence Eve extracts by pairing the announcements with her resent state."""
    if knowledge is None:
        return []
    from .protocol import round_observations

    return round_observations(knowledge.resent_preparation, bob_records)


def detection_probability_per_round(
    strategy: AttackStrategy | AttackKind, prep_kind: PrepKind, params: "ProtocolParams"
) -> float:
    """Tabulated probability of at least one detection in an attacked round,
    for a round whose original preparation is of ``prep_kind``."""
    kind = AttackKind(getattr(strategy, "kind", strategy))
    prep_kind = PrepKind(prep_kind)
    n, p_f = params.n_bobs, params.p_fidelity

    if prep_kind is PrepKind.SEPARABLE:
        d = D_MEASURE_RESEND if kind is AttackKind.MEASURE_RESEND_SEPARABLE else D_REPLACE
        return 1.0 - (1.0 - d * p_f / 2.0) ** n
    if prep_kind is PrepKind.ENTANGLED:
        d = D_REPLACE if not kind.measures else D_MEASURE_RESEND
        return d * p_f**n / 2.0
    raise ValueError(f"unknown combination {kind}, {prep_kind}")


def exact_detection_probability(
    kind: AttackKind, prep_kind: PrepKind, n_bobs: int, p_fidelity: float
) -> float:
    """Per-round detection probability of the strategies as simulated here.

    Agrees with :func:`detection_probability_per_round` except in two places:

    * GHZ resend of a separable original: when every Bob runs a same-basis
      check the parity correlation adds ``(p_F/2)^N 4^-N`` to the pass
      probability (for one Bob this is the separable measure-resend rate).
    * separable resend of a measured GHZ probe: a product state cannot give a
      deterministic parity unless each Bob happens to use Eve's basis, so a
      full check fails with probability ``1/2 - 2^-(N+1)`` instead of 1/4.
    """
    kind, prep_kind = AttackKind(kind), PrepKind(prep_kind)
    n, p_f = n_bobs, p_fidelity
    if prep_kind is PrepKind.SEPARABLE:
        if kind is AttackKind.MEASURE_RESEND_SEPARABLE:
            return 1.0 - (1.0 - p_f / 8.0) ** n
        undetected = (1.0 - p_f / 4.0) ** n
        if kind is AttackKind.MEASURE_RESEND_ENTANGLED:
            undetected += (p_f / 2.0) ** n * 4.0**-n
        return 1.0 - undetected
    if kind is AttackKind.MEASURE_RESEND_SEPARABLE:
        return p_f**n / 2.0 * (0.5 - 2.0 ** -(n + 1))
    if kind is AttackKind.MEASURE_RESEND_ENTANGLED:
        return p_f**n / 8.0
    return p_f**n / 4.0
