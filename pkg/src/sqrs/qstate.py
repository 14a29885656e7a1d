"""Measurement statistics for separable qubit probes and generalised GHZ probes.

Encoding phases and basis phases are kept as integer quarter turns
(``k * pi/2``); the parameters applied by the Bobs are real radians.
Every outcome law here reduces to ``(1 + cos(a)) / 2`` for the +1 result,
where ``a`` collects the state phase, any applied phase and the basis phase
(X contributes 0, Y contributes pi/2).

``state_vector_oracle`` builds the amplitude vector explicitly and is only
meant for verification of the closed forms.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
QUARTER_TURN = math.pi / 2.0
MAX_ORACLE_QUBITS = 12


def canonical(angle: float) -> float:
    """Map an angle into [0, 2pi)."""
    value = angle - TWO_PI * math.floor(angle / TWO_PI)
    # floor can leave exactly 2pi for tiny negative inputs
    return 0.0 if value >= TWO_PI else value


class Basis(enum.IntEnum):
    X = 0
    Y = 1

    @property
    def phase(self) -> float:
        return QUARTER_TURN * int(self)


class PrepKind(str, enum.Enum):
    SEPARABLE = "separable"
    ENTANGLED = "entangled"


@dataclass(frozen=True)
class ProbePreparation:
    """Alice's secret state choice for one round.

    ``phases`` holds quarter turns in {0, 1, 2, 3}: one per Bob for separable
    probes, a single net phase for a GHZ probe.
    """

    kind: PrepKind
    phases: tuple[int, ...]

    def __post_init__(self):
        if self.kind is PrepKind.ENTANGLED and len(self.phases) != 1:
            raise ValueError("entangled preparation carries exactly one phase")
        if self.kind is PrepKind.SEPARABLE and len(self.phases) == 0:
            raise ValueError("separable preparation needs one phase per Bob")
        if any(p not in (0, 1, 2, 3) for p in self.phases):
            raise ValueError(f"encoding phases must be quarter turns 0..3, got {self.phases}")

    @property
    def angles(self) -> tuple[float, ...]:
        return tuple(QUARTER_TURN * p for p in self.phases)


def _plus_probability(argument: float) -> float:
    # clip guards against 1 + cos rounding to slightly outside [0, 2]
    return min(1.0, max(0.0, 0.5 * (1.0 + math.cos(argument))))


def separable_outcome_prob(chi: float, phi: float, basis: Basis) -> float:
    """Probability of the +1 result for one qubit ``(|0> + e^{i chi}|1>)/sqrt2``
    after a phase gate ``P(phi)``, measured in ``basis``."""
    return _plus_probability(chi + phi + Basis(basis).phase)


def ghz_parity_prob(chi: float, applied_phase_sum: float, bases: Sequence[Basis]) -> float:
    """Probability that the product of all outcomes on a GHZ probe is +1."""
    if len(bases) == 0:
        raise ValueError("at least one basis is required")
    basis_sum = sum(Basis(b).phase for b in bases)
    return _plus_probability(chi + applied_phase_sum + basis_sum)


def sample_separable(chi: float, phi: float | None, basis: Basis, rng: np.random.Generator) -> int:
    p_plus = separable_outcome_prob(chi, 0.0 if phi is None else phi, basis)
    return 1 if rng.random() < p_plus else -1


def sample_ghz(
    chi: float,
    per_bob_applied_phases: Sequence[float | None],
    bases: Sequence[Basis],
    rng: np.random.Generator,
) -> list[int]:
    """Draw one outcome per Bob from a GHZ probe.

    The parity is drawn from :func:`ghz_parity_prob`; the individual results
    are then uniform over the assignments with that parity.
    """
    if len(per_bob_applied_phases) != len(bases):
        raise ValueError("one applied phase (or None) and one basis per Bob")
    applied = sum(0.0 if p is None else p for p in per_bob_applied_phases)
    parity = 1 if rng.random() < ghz_parity_prob(chi, applied, bases) else -1
    outcomes = [1 if rng.random() < 0.5 else -1 for _ in range(len(bases) - 1)]
    outcomes.append(parity * math.prod(outcomes))
    return outcomes


def _walsh_hadamard(amplitudes: np.ndarray, n_qubits: int) -> np.ndarray:
    """Apply H to every qubit of a 2**n amplitude vector."""
    state = amplitudes.reshape((2,) * n_qubits)
    h = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
    for axis in range(n_qubits):
        state = np.moveaxis(np.tensordot(h, state, axes=([1], [axis])), 0, axis)
    return state.reshape(-1)


def state_vector_oracle(
    prep: ProbePreparation,
    applied_phases: Sequence[float | None],
    bases: Sequence[Basis],
) -> dict[tuple[int, ...], float]:
    """Exact joint outcome distribution from explicit amplitudes.

    Each Bob applies ``P(phi_b)`` (skipped for ``None``), then measures in the
    given basis, implemented as ``P(basis_phase)`` followed by an X measurement.
    Qubit 0 is the most significant bit of the amplitude index; bit value 0 is
    the +1 outcome.
    """
    n = len(bases)
    if n == 0 or n > MAX_ORACLE_QUBITS:
        raise ValueError(f"oracle supports 1..{MAX_ORACLE_QUBITS} qubits, got {n}")
    if len(applied_phases) != n:
        raise ValueError("one applied phase (or None) per Bob")
    if prep.kind is PrepKind.SEPARABLE and len(prep.phases) != n:
        raise ValueError("separable preparation must match the number of Bobs")

    if prep.kind is PrepKind.SEPARABLE:
        amplitudes = np.ones(1, dtype=complex)
        for chi in prep.angles:
            qubit = np.array([1.0, np.exp(1j * chi)]) / math.sqrt(2.0)
            amplitudes = np.kron(amplitudes, qubit)
    else:
        amplitudes = np.zeros(2**n, dtype=complex)
        amplitudes[0] = 1.0 / math.sqrt(2.0)
        amplitudes[-1] = np.exp(1j * prep.angles[0]) / math.sqrt(2.0)

    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    local = np.array(
        [(0.0 if p is None else p) + Basis(b).phase for p, b in zip(applied_phases, bases)]
    )
    amplitudes = amplitudes * np.exp(1j * (bits @ local))
    probabilities = np.abs(_walsh_hadamard(amplitudes, n)) ** 2

    outcomes = 1 - 2 * bits
    return {tuple(int(v) for v in row): float(p) for row, p in zip(outcomes, probabilities)}


def parity_marginal(distribution: dict[tuple[int, ...], float]) -> float:
    """P(product of outcomes = +1) from a joint distribution."""
    return sum(p for outcome, p in distribution.items() if math.prod(outcome) == 1)


def single_marginal(distribution: dict[tuple[int, ...], float], index: int) -> float:
    """P(outcome of one Bob = +1) from a joint distribution."""
    return sum(p for outcome, p in distribution.items() if outcome[index] == 1)
