"""Grid-based circular Bayesian estimation of the summed phase.

Every measurement in the protocol has the outcome law
``P(s) = (1 + s cos(phase + offset)) / 2`` where ``phase`` is a sum of the
Bobs' parameters (a *combination*, identified by a bitmask of Bob indices)
and ``offset`` is a multiple of pi/2 known to whoever prepared the probe.
Folding the sign into the offset leaves four categories per combination,
so an :class:`EvidenceSet` is just a ``(2**n_bobs, 4)`` count table.

Combinations with the same number of Bobs are grouped so that each group
sums to ``q * theta``; group likelihoods are convolved on the grid, pulled
back to ``theta`` and multiplied together under a uniform prior.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

GRID_BINS = 1024
EXHAUSTIVE_LIMIT = 10_000
_FLOOR = 1e-300


class Observation(NamedTuple):
    """One announced result tied to a known preparation.

    ``key`` is the bitmask of Bobs whose phases were applied, ``offset`` the
    known phase in quarter turns (encoding phase plus basis phases) and
    ``outcome`` the announced +1/-1 (a parity for GHZ probes).
    """

    key: int
    offset: int
    outcome: int

    @property
    def category(self) -> int:
        return (self.offset + (0 if self.outcome == 1 else 2)) % 4

    @property
    def m(self) -> int:
        return bin(self.key).count("1")

    def factor(self, phase) -> np.ndarray | float:
        return 0.5 * (1.0 + np.cos(phase + self.category * math.pi / 2.0))


class EvidenceSet:
    """Counts of observations per (combination, category)."""

    def __init__(self, n_bobs: int, counts: np.ndarray | None = None):
        self.n_bobs = n_bobs
        shape = (1 << n_bobs, 4)
        if counts is None:
            counts = np.zeros(shape, dtype=np.int64)
        counts = np.asarray(counts)
        if counts.shape != shape:
            raise ValueError(f"counts must have shape {shape}, got {counts.shape}")
        self.counts = counts

    @classmethod
    def from_observations(cls, n_bobs: int, observations: Iterable[Observation]) -> "EvidenceSet":
        ev = cls(n_bobs)
        ev.extend(observations)
        return ev

    def add(self, obs: Observation) -> None:
        if not 0 < obs.key < (1 << self.n_bobs):
            raise ValueError(f"combination key {obs.key} outside 1..2^{self.n_bobs}-1")
        self.counts[obs.key, obs.category] += 1

    def extend(self, observations: Iterable[Observation]) -> None:
        for obs in observations:
            self.add(obs)

    def key_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class LikelihoodGrid:
    """Values of a likelihood (or density) at ``theta_j = 2 pi j / K``."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        k = self.values.size
        if k == 0 or k & (k - 1):
            raise ValueError(f"grid size must be a power of two, got {k}")
        if np.any(self.values < 0):
            raise ValueError("likelihood values must be non-negative")

    @property
    def bins(self) -> int:
        return self.values.size

    @property
    def spacing(self) -> float:
        return 2.0 * math.pi / self.bins

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.bins) * self.spacing

    def normalize(self) -> "LikelihoodGrid":
        mass = self.values.sum() * self.spacing
        if not mass > 0 or not math.isfinite(mass):
            raise ValueError("cannot normalize a grid with zero or non-finite mass")
        return LikelihoodGrid(self.values / mass, normalized=True)

    @classmethod
    def uniform(cls, bins: int = GRID_BINS) -> "LikelihoodGrid":
        return cls(np.full(bins, 1.0 / (2.0 * math.pi)), normalized=True)

    @classmethod
    def delta(cls, angle: float, bins: int = GRID_BINS) -> "LikelihoodGrid":
        values = np.zeros(bins)
        values[int(round(angle / (2.0 * math.pi) * bins)) % bins] = bins / (2.0 * math.pi)
        return cls(values, normalized=True)

    def circular_mean(self) -> float:
        z = np.sum(self.values * np.exp(1j * self.theta))
        return float(np.angle(z) % (2.0 * math.pi))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "value"])
            for t, v in zip(self.theta, self.values):
                writer.writerow([f"{t:.10f}", f"{v:.12e}"])


@functools.lru_cache(maxsize=8)
def _log_factor_table(bins: int) -> np.ndarray:
    theta = np.arange(bins) * (2.0 * math.pi / bins)
    shifts = np.arange(4)[:, None] * (math.pi / 2.0)
    factors = 0.5 * (1.0 + np.cos(theta[None, :] + shifts))
    return np.log(np.maximum(factors, _FLOOR))


def _grids_from_log(log_values: np.ndarray) -> np.ndarray:
    shifted = log_values - log_values.max(axis=-1, keepdims=True)
    return np.exp(shifted)


def likelihood_from_counts(category_counts: np.ndarray, bins: int = GRID_BINS) -> LikelihoodGrid:
    counts = np.asarray(category_counts, dtype=float)
    if counts.sum() == 0:
        return LikelihoodGrid.uniform(bins)
    return LikelihoodGrid(_grids_from_log(counts @ _log_factor_table(bins)))


def likelihood_from_evidence(
    observations: Sequence[Observation], bins: int = GRID_BINS
) -> LikelihoodGrid:
    """Unnormalized likelihood of one combination's phase (max scaled to 1)."""
    counts = np.zeros(4)
    for obs in observations:
        counts[obs.category] += 1
    return likelihood_from_counts(counts, bins)


def circular_convolve(grids: Sequence[LikelihoodGrid]) -> LikelihoodGrid:
    """Density of the modular sum of independent angles, via FFT."""
    if not grids:
        raise ValueError("nothing to convolve")
    bins = grids[0].bins
    if any(g.bins != bins for g in grids):
        raise ValueError("all grids must have the same number of bins")
    densities = [g if g.normalized else g.normalize() for g in grids]
    if len(densities) == 1:
        return densities[0]
    spacing = densities[0].spacing
    spectrum = np.ones(bins // 2 + 1, dtype=complex)
    for d in densities:
        spectrum *= np.fft.rfft(d.values * spacing)
    values = np.fft.irfft(spectrum, n=bins) / spacing
    return LikelihoodGrid(np.clip(values, 0.0, None)).normalize()


def rescale_sum_to_theta(grid: LikelihoodGrid, q: int) -> LikelihoodGrid:
    """Pull a grid over ``q*theta`` back to ``theta``: bin j reads bin q*j mod K."""
    if q < 1:
        raise ValueError("q must be a positive integer")
    if q == 1:
        return grid
    index = (q * np.arange(grid.bins)) % grid.bins
    return LikelihoodGrid(grid.values[index])


def n_effective(counts: Sequence[int]) -> float:
    if len(counts) == 0:
        raise ValueError("n_effective of an empty list")
    if any(c <= 0 for c in counts):
        return 0.0
    return 1.0 / math.fsum(1.0 / c for c in counts)


@dataclass(frozen=True)
class CombinationGroup:
    keys: tuple[int, ...]
    q: int
    n_eff: float


@dataclass
class CombinationPlan:
    groups: list[CombinationGroup] = field(default_factory=list)
    exhaustive: bool = True

    @property
    def total_n_eff(self) -> float:
        return math.fsum(g.n_eff for g in self.groups)


def _bob_members(key: int, n_bobs: int) -> list[int]:
    return [b for b in range(n_bobs) if key >> b & 1]


@functools.lru_cache(maxsize=4096)
def uniform_covers(
    keys: tuple[int, ...], n_bobs: int, max_q: int | None = None, node_budget: int = 200_000
) -> tuple[tuple[tuple[int, ...], int], ...]:
    """Irreducible subsets of ``keys`` covering every Bob the same number of times.

    Returns ``(subset, q)`` pairs, each subset summing to ``q * theta`` with
    no proper sub-subset that does so too. Exact search (with a node budget
    for very large key sets).
    """
    if not keys:
        return ()
    keys = tuple(sorted(keys))
    members = [_bob_members(k, n_bobs) for k in keys]
    m = len(members[0])
    by_bob = [[i for i, mem in enumerate(members) if b in mem] for b in range(n_bobs)]
    q_limit = min(min(len(x) for x in by_bob), math.comb(n_bobs - 1, m - 1))
    if max_q is not None:
        q_limit = min(q_limit, max_q)

    found: list[tuple[int, int]] = []  # (bitmask over key indices, q)
    nodes = 0

    def search(q: int, counts: list[int], used: int, column: int, last: int) -> None:
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            return
        while column < n_bobs and counts[column] == q:
            column, last = column + 1, -1
        if column == n_bobs:
            found.append((used, q))
            return
        for i in by_bob[column]:
            if i <= last or used >> i & 1:
                continue
            if any(counts[b] >= q for b in members[i]):
                continue
            extended = used | (1 << i)
            # anything containing a smaller cover is reducible
            if any(sub & extended == sub for sub, _ in found):
                continue
            for b in members[i]:
                counts[b] += 1
            search(q, counts, extended, column, i)
            for b in members[i]:
                counts[b] -= 1

    for q in range(1, q_limit + 1):
        search(q, [0] * n_bobs, 0, 0, -1)

    return tuple(
        (tuple(keys[i] for i in range(len(keys)) if used >> i & 1), q) for used, q in found
    )


def _best_packing(
    candidates: list[CombinationGroup], limit: int
) -> tuple[list[CombinationGroup], bool]:
    """Disjoint candidate groups maximizing the summed n_eff.

    Exhaustive while the number of groupings explored stays within ``limit``,
    otherwise greedy by descending n_eff.
    """
    candidates = sorted(candidates, key=lambda g: -g.n_eff)
    masks = []
    for g in candidates:
        mask = 0
        for k in g.keys:
            mask |= 1 << k
        masks.append(mask)

    best: list[int] = []
    best_value = -1.0
    explored = 0
    aborted = False

    def search(start: int, used: int, chosen: list[int], value: float) -> None:
        nonlocal best, best_value, explored, aborted
        if aborted:
            return
        explored += 1
        if explored > limit:
            aborted = True
            return
        if value > best_value:
            best, best_value = list(chosen), value
        for i in range(start, len(candidates)):
            if masks[i] & used:
                continue
            chosen.append(i)
            search(i + 1, used | masks[i], chosen, value + candidates[i].n_eff)
            chosen.pop()

    search(0, 0, [], 0.0)
    if not aborted:
        return [candidates[i] for i in best], True

    used, greedy = 0, []
    for g, mask in zip(candidates, masks):
        if not mask & used:
            greedy.append(g)
            used |= mask
    return greedy, False


def plan_combinations(
    evidence: EvidenceSet, n_bobs: int | None = None, exhaustive_limit: int = EXHAUSTIVE_LIMIT
) -> CombinationPlan:
    n_bobs = evidence.n_bobs if n_bobs is None else n_bobs
    per_key = evidence.key_counts()
    plan = CombinationPlan()
    by_m: dict[int, list[int]] = {}
    for key in np.flatnonzero(per_key):
        by_m.setdefault(bin(int(key)).count("1"), []).append(int(key))

    for m in sorted(by_m):
        available = tuple(sorted(by_m[m]))
        candidates = [
            CombinationGroup(subset, q, n_effective([int(per_key[k]) for k in subset]))
            for subset, q in uniform_covers(available, n_bobs)
        ]
        if not candidates:
            continue
        chosen, exhaustive = _best_packing(candidates, exhaustive_limit)
        plan.groups.extend(sorted(chosen, key=lambda g: g.keys))
        plan.exhaustive &= exhaustive
    return plan


def theta_posterior(
    evidence: EvidenceSet, bins: int = GRID_BINS, plan: CombinationPlan | None = None
) -> LikelihoodGrid:
    """Normalized posterior of theta under a uniform prior."""
    if plan is None:
        plan = plan_combinations(evidence)
    if not plan.groups:
        return LikelihoodGrid.uniform(bins)

    keys = sorted({k for g in plan.groups for k in g.keys})
    table = _log_factor_table(bins)
    member_grids = dict(zip(keys, _grids_from_log(evidence.counts[keys].astype(float) @ table)))

    log_post = np.zeros(bins)
    for group in plan.groups:
        grid = circular_convolve([LikelihoodGrid(member_grids[k]) for k in group.keys])
        grid = rescale_sum_to_theta(grid, group.q)
        log_post += np.log(np.maximum(grid.values, _FLOOR))
    return LikelihoodGrid(_grids_from_log(log_post)).normalize()


def lambda_dispersion(grid: LikelihoodGrid, theta_true: float) -> float:
    """Posterior expectation of ``1 - cos(theta_hat - theta_true)``."""
    if not grid.normalized:
        raise ValueError("lambda needs a normalized grid")
    cost = 1.0 - np.cos(grid.theta - theta_true)
    return float(np.sum(cost * grid.values) * grid.spacing)


def capital_lambda(executions: Sequence[tuple[EvidenceSet, float]], bins: int = GRID_BINS) -> float:
    """Mean dispersion over executions given as ``(evidence, theta_true)`` pairs."""
    if len(executions) == 0:
        raise ValueError("no executions to average")
    return float(
        np.mean([lambda_dispersion(theta_posterior(ev, bins), theta) for ev, theta in executions])
    )
