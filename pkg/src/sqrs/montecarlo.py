"""Seeded Monte Carlo experiments built on the array engine.

All randomness comes from :func:`stream`, which derives an independent
generator from the master seed and an integer tag tuple, so results do not
depend on evaluation order or on how work is split across processes.
"""
from __future__ import annotations

import contextlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adversary import AttackStrategy
from .engine import count_observations, simulate_rounds
from .inference import GRID_BINS, EvidenceSet, lambda_dispersion, theta_posterior
from .qstate import TWO_PI
from .security import LambdaCurve

# cap on E * R * N array elements simulated at once
_CHUNK_ELEMENTS = 2_000_000


def stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(int(t) for t in tags)))
    )


@contextlib.contextmanager
def worker_pool(threads: int):
    """Yield an order-preserving ``map`` over ``threads`` worker processes."""
    if threads <= 1:
        yield lambda fn, items: list(map(fn, items))
        return
    with ProcessPoolExecutor(threads) as pool:
        yield lambda fn, items: list(pool.map(fn, items))


def draw_truth_sets(n_bobs: int, count: int, seed: int) -> np.ndarray:
    """``(count, n_bobs)`` true phases shared by every point of an experiment."""
    return stream(seed, 0, n_bobs).uniform(0.0, TWO_PI, (count, n_bobs))


def thetas_of(phis: np.ndarray) -> np.ndarray:
    return np.mod(np.asarray(phis).sum(axis=1), TWO_PI)


def posterior_lambdas(counts: np.ndarray, thetas: np.ndarray, bins: int = GRID_BINS) -> np.ndarray:
    """Dispersion of each execution's posterior; ``counts`` is ``(E, 2**N, 4)``."""
    n_bobs = int(counts.shape[1]).bit_length() - 1
    return np.array(
        [lambda_dispersion(theta_posterior(EvidenceSet(n_bobs, c), bins), t) for c, t in zip(counts, thetas)]
    )


def _chunks(n_exec: int, n_rounds: int, n_bobs: int):
    size = max(1, _CHUNK_ELEMENTS // max(1, n_rounds * n_bobs))
    for start in range(0, n_exec, size):
        yield slice(start, min(n_exec, start + size))


def repeat_truths(phis: np.ndarray, repetitions: int) -> np.ndarray:
    """Every truth set repeated ``repetitions`` times, truth-major."""
    return np.repeat(np.asarray(phis, dtype=float), repetitions, axis=0)


def alice_lambdas(
    n_bobs: int,
    p_separable: float,
    p_fidelity: float,
    n_rounds: int,
    phis: np.ndarray,
    rng: np.random.Generator,
    bins: int = GRID_BINS,
) -> np.ndarray:
    """Alice's dispersion after ``n_rounds`` honest rounds, one per row of ``phis``."""
    out = []
    for part in _chunks(len(phis), n_rounds, n_bobs):
        batch = simulate_rounds(n_bobs, p_separable, p_fidelity, phis[part], n_rounds, None, rng)
        out.append(posterior_lambdas(batch.alice_counts(), thetas_of(phis[part]), bins))
    return np.concatenate(out)


@dataclass
class AttackRun:
    """Stop-at-first-detection executions under attack."""

    lambdas: np.ndarray  # Eve's dispersion per execution
    detection_round: np.ndarray  # 1-based round of the first detection, 0 if never

    @property
    def undetected_fraction(self) -> float:
        return float(np.mean(self.detection_round == 0))

    @property
    def mean_rounds_to_detection(self) -> float:
        hit = self.detection_round[self.detection_round > 0]
        return float(hit.mean()) if hit.size else math.nan


def attack_run(
    n_bobs: int,
    p_separable: float,
    p_fidelity: float,
    n_rounds: int,
    phis: np.ndarray,
    attack: AttackStrategy,
    rng: np.random.Generator,
    bins: int = GRID_BINS,
) -> AttackRun:
    """Eve's view runs up to and including the round in which she is caught."""
    lambdas, rounds = [], []
    for part in _chunks(len(phis), n_rounds, n_bobs):
        batch = simulate_rounds(n_bobs, p_separable, p_fidelity, phis[part], n_rounds, attack, rng)
        first = batch.first_detection()
        counts = batch.eve_counts(batch.until_detection(include_detected=True))
        lambdas.append(posterior_lambdas(counts, thetas_of(phis[part]), bins))
        rounds.append(np.where(first < n_rounds, first + 1, 0))
    return AttackRun(np.concatenate(lambdas), np.concatenate(rounds))


def _undetected_prefix(n_bobs, p_separable, p_fidelity, attack, n_cap, phis, rng):
    """Eve's keys and categories for the first ``n_cap`` undetected rounds.

    Rounds are i.i.d., so dropping detected ones samples each round
    conditionally on surviving Alice's checks.
    """
    e = len(phis)
    keys_out = np.zeros((e, n_cap, n_bobs), dtype=np.int64)
    cats_out = np.zeros((e, n_cap, n_bobs), dtype=np.int64)
    filled = np.zeros(e, dtype=np.int64)
    while (filled < n_cap).any():
        todo = np.flatnonzero(filled < n_cap)
        batch = simulate_rounds(n_bobs, p_separable, p_fidelity, phis[todo], n_cap, attack, rng)
        keys, cats = batch.eve_keys()
        keep = ~batch.detected
        slot = filled[todo][:, None] + np.cumsum(keep, axis=1) - 1
        take = keep & (slot < n_cap)
        rows = np.broadcast_to(todo[:, None], keep.shape)[take]
        keys_out[rows, slot[take]] = keys[take]
        cats_out[rows, slot[take]] = cats[take]
        filled[todo] = np.minimum(n_cap, filled[todo] + keep.sum(axis=1))
    return keys_out, cats_out


def eve_lambda_curve(
    n_bobs: int,
    p_separable: float,
    p_fidelity: float,
    attack: AttackStrategy,
    n_cap: int,
    phis: np.ndarray,
    rng: np.random.Generator,
    bins: int = GRID_BINS,
) -> LambdaCurve:
    """Eve's mean dispersion after exactly n undetected attacked rounds, n = 0..n_cap.

    Surviving rounds carry fewer fidelity checks than average, so the curve
    is conditioned on survival and depends on Alice's preparation mix.
    """
    if n_cap < 1:
        raise ValueError("n_cap must be at least 1")
    always = AttackStrategy(attack.kind, 1.0)
    n_exec = len(phis)
    values = np.zeros((n_exec, n_cap + 1))
    cells = 4 << n_bobs
    row = 0
    for part in _chunks(n_exec, n_cap, n_bobs):
        sub = phis[part]
        thetas = thetas_of(sub)
        keys, cats = _undetected_prefix(n_bobs, p_separable, p_fidelity, always, n_cap, sub, rng)
        e = len(sub)
        # per-round count increments, then prefix sums over rounds
        flat = (np.arange(e)[:, None, None] * n_cap + np.arange(n_cap)[None, :, None]) * cells + keys * 4 + cats
        valid = keys > 0
        per_round = np.bincount(flat[valid], minlength=e * n_cap * cells).reshape(e, n_cap, 1 << n_bobs, 4)
        cumulative = np.concatenate([np.zeros((e, 1, 1 << n_bobs, 4), dtype=np.int64), per_round.cumsum(axis=1)], axis=1)
        for i in range(e):
            values[row + i] = posterior_lambdas(cumulative[i], np.full(n_cap + 1, thetas[i]), bins)
        row += e
    errors = values.std(axis=0, ddof=1) / math.sqrt(n_exec) if n_exec > 1 else None
    return LambdaCurve(values.mean(axis=0), errors)


def alice_lambda_curve(
    n_bobs: int,
    p_separable: float,
    p_fidelity: float,
    round_counts: list[int],
    phis: np.ndarray,
    rng: np.random.Generator,
    bins: int = GRID_BINS,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of Alice's dispersion at each round count.

    One simulation of ``max(round_counts)`` rounds per execution, read off at
    the prefixes, so the curve is a single consistent trajectory.
    """
    n_max = max(round_counts)
    rows = []
    for part in _chunks(len(phis), n_max, n_bobs):
        sub = phis[part]
        batch = simulate_rounds(n_bobs, p_separable, p_fidelity, sub, n_max, None, rng)
        keys, cats = batch.alice_keys()
        thetas = thetas_of(sub)
        cols = []
        for n in round_counts:
            counts = count_observations(keys[:, :n], cats[:, :n], n_bobs)
            cols.append(posterior_lambdas(counts, thetas, bins))
        rows.append(np.stack(cols, axis=1))
    data = np.concatenate(rows)
    err = data.std(axis=0, ddof=1) / math.sqrt(len(data)) if len(data) > 1 else np.zeros(len(round_counts))
    return data.mean(axis=0), err
