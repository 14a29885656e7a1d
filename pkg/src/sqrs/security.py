"""Closed-form detection statistics and the lower bound on Eve's dispersion.

``k_detections`` is the number of detections in the trinomial bound; grid
sizes elsewhere in the package are ``bins``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversary import AttackStrategy, detection_probability_per_round, exact_detection_probability
from .protocol import ProtocolParams
from .qstate import PrepKind

SINGLE_BOB_CAP = 100
MULTI_BOB_CAP = 50


def geo1_pmf(n_r: int, d: float) -> float:
    """P(n_r undetected rounds before the first detection)."""
    if not 0.0 < d <= 1.0:
        raise ValueError("geometric distribution needs 0 < d <= 1")
    if n_r < 0:
        raise ValueError("n_r must be non-negative")
    return (1.0 - d) ** n_r * d


def geo2_pmf(n_r: int, d: float) -> float:
    """P(first detection on round n_r), counting the detected round."""
    if not 0.0 < d <= 1.0:
        raise ValueError("geometric distribution needs 0 < d <= 1")
    if n_r < 1:
        raise ValueError("n_r counts the detected round, so n_r >= 1")
    return (1.0 - d) ** (n_r - 1) * d


@dataclass(frozen=True)
class DetectionDistribution:
    d_s: float
    d_e: float

    def __post_init__(self):
        if self.d_s < 0 or self.d_e < 0 or self.d_s + self.d_e > 1.0 + 1e-12:
            raise ValueError(f"invalid detection rates d_s={self.d_s}, d_e={self.d_e}")

    @property
    def u(self) -> float:
        return max(0.0, 1.0 - self.d_s - self.d_e)

    @property
    def total(self) -> float:
        return self.d_s + self.d_e


def snt_bound(k_detections: int, n_r: int, d_s: float, d_e: float) -> float:
    """Upper bound on P(n_r information rounds before the k-th detection).

    Term ``k`` counts detections coming from separable rounds, whose
    detected round still leaks information; it needs ``k <= n_r``.
    """
    if k_detections < 1:
        raise ValueError("k_detections must be at least 1")
    if n_r < 0:
        raise ValueError("n_r must be non-negative")
    u = DetectionDistribution(d_s, d_e).u
    return math.fsum(
        math.comb(k_detections, k) * u ** (n_r - k) * d_s**k * d_e ** (k_detections - k)
        for k in range(min(n_r, k_detections) + 1)
    )


DETECTION_MODELS = ("table", "exact")


def per_round_rates(
    strategy: AttackStrategy, params: ProtocolParams, model: str = "table"
) -> DetectionDistribution:
    """Per-round detection split by the kind of state Alice prepared.

    ``model="table"`` uses the tabulated per-check rates; ``"exact"`` the
    rates of the strategies as simulated (see
    :func:`sqrs.adversary.exact_detection_probability`).
    """
    if model == "table":
        def cell(kind):
            return detection_probability_per_round(strategy, kind, params)
    elif model == "exact":
        def cell(kind):
            return exact_detection_probability(strategy.kind, kind, params.n_bobs, params.p_fidelity)
    else:
        raise ValueError(f"model must be one of {DETECTION_MODELS}")
    rate = strategy.attack_probability
    d_s = params.p_separable * cell(PrepKind.SEPARABLE)
    d_e = params.p_entangled * cell(PrepKind.ENTANGLED)
    return DetectionDistribution(rate * d_s, rate * d_e)


@dataclass
class LambdaCurve:
    """Eve's mean dispersion after exactly n undetected attacked rounds, n = 0..n_cap.

    Beyond ``n_cap`` the curve is taken as 0, which only lowers the bound.
    """

    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < -1e-12) or np.any(self.values > 2.0 + 1e-12):
            raise ValueError("dispersion values must lie in [0, 2]")

    @property
    def n_cap(self) -> int:
        return self.values.size - 1

    def __call__(self, n: int) -> float:
        return float(self.values[n]) if n <= self.n_cap else 0.0


def information_round_weights(
    dist: DetectionDistribution, n_bobs: int, n_cap: int
) -> np.ndarray:
    """P(Eve gets exactly n information rounds), n = 0..n_cap.

    One Bob: a detection needs a fidelity check, so the detected round carries
    nothing and the count is geometric from 0. Several Bobs: the trinomial
    bound with a single detection.
    """
    n = np.arange(n_cap + 1)
    if dist.total <= 0.0:
        return np.zeros(n_cap + 1)
    if n_bobs == 1:
        return np.array([geo1_pmf(int(k), dist.total) for k in n])
    return np.array([snt_bound(1, int(k), dist.d_s, dist.d_e) for k in n])


def lambda_e_lower_bound(
    strategy: AttackStrategy, params: ProtocolParams, lambda_curve: LambdaCurve, model: str = "table"
) -> float:
    dist = per_round_rates(strategy, params, model)
    weights = information_round_weights(dist, params.n_bobs, lambda_curve.n_cap)
    return float(np.dot(weights, lambda_curve.values))


def undetected_probability(
    strategy: AttackStrategy, params: ProtocolParams, n_rounds: int, model: str = "table"
) -> float:
    return per_round_rates(strategy, params, model).u ** n_rounds
