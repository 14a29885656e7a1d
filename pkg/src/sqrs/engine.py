"""Array implementation of the protocol for Monte Carlo work.

Simulates ``E`` independent executions of ``R`` rounds at once. Phases are
quarter-turn integers as in :mod:`sqrs.qstate`; for GHZ rounds the net
phase lives in column 0 of ``chi``. The semantics mirror
:func:`sqrs.protocol.run_round` and :func:`sqrs.adversary.intercept`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversary import AttackKind, AttackStrategy
from .qstate import PrepKind

HALF_PI = math.pi / 2.0


@dataclass
class RoundBatch:
    n_bobs: int
    phis: np.ndarray  # (E, N) true phases
    entangled: np.ndarray  # (E, R) Alice's preparation kind
    chi: np.ndarray  # (E, R, N) Alice's phases
    applied: np.ndarray  # (E, R, N)
    basis: np.ndarray  # (E, R, N) 0 = X, 1 = Y
    outcome: np.ndarray  # (E, R, N) +1 / -1
    attacked: np.ndarray  # (E, R)
    resent_entangled: np.ndarray  # (E, R) kind of the state the Bobs received
    resent_chi: np.ndarray  # (E, R, N)
    detected: np.ndarray  # (E, R)

    @property
    def n_executions(self) -> int:
        return self.entangled.shape[0]

    @property
    def n_rounds(self) -> int:
        return self.entangled.shape[1]

    def first_detection(self) -> np.ndarray:
        """Index of the first detected round per execution, ``R`` if never."""
        hit = self.detected.any(axis=1)
        return np.where(hit, self.detected.argmax(axis=1), self.n_rounds)

    def until_detection(self, include_detected: bool) -> np.ndarray:
        """Mask of the rounds that happen under stop-at-first-detection."""
        first = self.first_detection()[:, None]
        r = np.arange(self.n_rounds)[None, :]
        return r <= first if include_detected else r < first

    def alice_keys(self) -> tuple[np.ndarray, np.ndarray]:
        return observation_keys(self.entangled, self.chi, self.applied, self.basis, self.outcome)

    def eve_keys(self) -> tuple[np.ndarray, np.ndarray]:
        keys, cats = observation_keys(
            self.resent_entangled, self.resent_chi, self.applied, self.basis, self.outcome
        )
        keys = np.where(self.attacked[..., None], keys, 0)
        return keys, cats

    def alice_counts(self, mask: np.ndarray | None = None) -> np.ndarray:
        return count_observations(*self.alice_keys(), self.n_bobs, mask)

    def eve_counts(self, mask: np.ndarray | None = None) -> np.ndarray:
        return count_observations(*self.eve_keys(), self.n_bobs, mask)


def _bernoulli_outcomes(rng: np.random.Generator, p_plus: np.ndarray) -> np.ndarray:
    return np.where(rng.random(p_plus.shape) < p_plus, 1, -1).astype(np.int8)


def _ghz_outcomes(rng: np.random.Generator, net_phase: np.ndarray, n: int) -> np.ndarray:
    """Per-Bob results with parity drawn from ``(1 + cos(net_phase))/2``."""
    parity = _bernoulli_outcomes(rng, 0.5 * (1.0 + np.cos(net_phase)))
    free = np.where(rng.random(net_phase.shape + (n - 1,)) < 0.5, 1, -1).astype(np.int8)
    last = parity * np.prod(free, axis=-1, dtype=np.int8)
    return np.concatenate([free, last[..., None]], axis=-1)


def _measure(rng, entangled, chi, phase_offsets, basis):
    """Outcomes on the delivered states; ``phase_offsets`` are real radians."""
    n = chi.shape[-1]
    sep = _bernoulli_outcomes(
        rng, 0.5 * (1.0 + np.cos(phase_offsets + HALF_PI * (chi + basis)))
    )
    net = HALF_PI * (chi[..., 0] + basis.sum(axis=-1)) + phase_offsets.sum(axis=-1)
    ghz = _ghz_outcomes(rng, net, n)
    return np.where(entangled[..., None], ghz, sep)


def _intercept(rng, kind: AttackKind, entangled, chi):
    shape, n = chi.shape[:-1], chi.shape[-1]
    if not kind.measures:
        resent = rng.integers(0, 4, chi.shape)
        if kind.resend_kind is PrepKind.ENTANGLED:
            resent[..., 1:] = 0
        return resent

    eve_basis = rng.integers(0, 2, chi.shape)
    sep = _bernoulli_outcomes(rng, 0.5 * (1.0 + np.cos(HALF_PI * (chi + eve_basis))))
    ghz = _ghz_outcomes(rng, HALF_PI * (chi[..., 0] + eve_basis.sum(axis=-1)), n)
    eve_outcome = np.where(entangled[..., None], ghz, sep)
    guess = (-eve_basis + np.where(eve_outcome == 1, 0, 2)) % 4
    if kind.resend_kind is PrepKind.SEPARABLE:
        return guess
    resent = np.zeros(shape + (n,), dtype=guess.dtype)
    resent[..., 0] = guess.sum(axis=-1) % 4
    return resent


def _verify(entangled, chi, applied, basis, outcome):
    """Same-basis fidelity contradictions against Alice's preparation."""
    total = chi + basis
    check = ~applied & (total % 2 == 0)
    predicted = np.where(total % 4 == 0, 1, -1)
    sep_fail = (check & (outcome != predicted)).any(axis=-1)

    net = chi[..., 0] + basis.sum(axis=-1)
    all_check = ~applied.any(axis=-1) & (net % 2 == 0)
    parity = np.prod(outcome, axis=-1, dtype=np.int8)
    ent_fail = all_check & (parity != np.where(net % 4 == 0, 1, -1))
    return np.where(entangled, ent_fail, sep_fail)


def simulate_rounds(
    n_bobs: int,
    p_separable: float,
    p_fidelity: float,
    phis: np.ndarray,
    n_rounds: int,
    attack: AttackStrategy | None,
    rng: np.random.Generator,
) -> RoundBatch:
    phis = np.asarray(phis, dtype=float)
    if phis.ndim != 2 or phis.shape[1] != n_bobs:
        raise ValueError(f"phis must have shape (E, {n_bobs})")
    e = phis.shape[0]
    shape = (e, n_rounds)

    entangled = rng.random(shape) >= p_separable
    chi = rng.integers(0, 4, shape + (n_bobs,))
    chi[..., 1:] = np.where(entangled[..., None], 0, chi[..., 1:])

    if attack is not None:
        attacked = rng.random(shape) < attack.attack_probability
        resent = _intercept(rng, attack.kind, entangled, chi)
        resent_entangled = np.full(shape, attack.kind.resend_kind is PrepKind.ENTANGLED)
        resent_entangled = np.where(attacked, resent_entangled, entangled)
        resent_chi = np.where(attacked[..., None], resent, chi)
    else:
        attacked = np.zeros(shape, dtype=bool)
        resent_entangled, resent_chi = entangled, chi

    applied = rng.random(shape + (n_bobs,)) >= p_fidelity
    basis = rng.integers(0, 2, shape + (n_bobs,))
    phase_offsets = np.where(applied, phis[:, None, :], 0.0)
    outcome = _measure(rng, resent_entangled, resent_chi, phase_offsets, basis)
    detected = _verify(entangled, chi, applied, basis, outcome)

    return RoundBatch(
        n_bobs=n_bobs,
        phis=phis,
        entangled=entangled,
        chi=chi,
        applied=applied,
        basis=basis,
        outcome=outcome,
        attacked=attacked,
        resent_entangled=resent_entangled,
        resent_chi=resent_chi,
        detected=detected,
    )


def observation_keys(entangled, chi, applied, basis, outcome) -> tuple[np.ndarray, np.ndarray]:
    """Combination key and category for every potential observation.

    Returns two ``(E, R, N)`` arrays. For separable rounds slot ``b`` is Bob
    b's own observation; for GHZ rounds slot 0 carries the single parity
    observation and the rest are empty. Key 0 means "no observation".
    """
    n = chi.shape[-1]
    bits = 1 << np.arange(n)
    sep_key = np.where(applied, bits, 0)
    sep_cat = (chi + basis + np.where(outcome == 1, 0, 2)) % 4

    ent_key = (applied * bits).sum(axis=-1)
    parity = np.prod(outcome, axis=-1, dtype=np.int8)
    ent_cat = (chi[..., 0] + basis.sum(axis=-1) + np.where(parity == 1, 0, 2)) % 4
    ghz_key = np.zeros_like(sep_key)
    ghz_key[..., 0] = ent_key
    ghz_cat = np.zeros_like(sep_cat)
    ghz_cat[..., 0] = ent_cat

    ent = entangled[..., None]
    return np.where(ent, ghz_key, sep_key), np.where(ent, ghz_cat, sep_cat)


def count_observations(keys, cats, n_bobs: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Aggregate to ``(E, 2**N, 4)`` count tables, optionally over masked rounds."""
    e = keys.shape[0]
    cells = (1 << n_bobs) * 4
    valid = keys > 0
    if mask is not None:
        valid &= mask[..., None]
    exec_index = np.broadcast_to(np.arange(e)[:, None, None], keys.shape)
    flat = exec_index * cells + keys * 4 + cats
    counts = np.bincount(flat[valid], minlength=e * cells)
    return counts.reshape(e, 1 << n_bobs, 4)
