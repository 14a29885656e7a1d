"""Fisher information per round and the Cramer-Rao bound for the summed phase."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .protocol import ProtocolParams
from .qstate import Basis


class ZeroInformationError(ValueError):
    """The protocol yields no information on theta, so the bound is unbounded."""


def p_k(m: int, params: ProtocolParams) -> float:
    """Probability per round of measuring one particular m-Bob phase sum."""
    n = params.n_bobs
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in 1..{n}")
    p_m, p_f = params.p_measure, params.p_fidelity
    separable = params.p_separable * p_m if m == 1 else 0.0
    return separable + params.p_entangled * p_m**m * p_f ** (n - m)


def measurement_information(x: float, basis: Basis = Basis.X) -> float:
    """Classical Fisher information of one +/-1 measurement about its phase.

    ``p = (1 + cos(x + b))/2`` gives ``p'^2/p + p'^2/(1-p) = sin^2/(1-cos^2)``.
    """
    a = x + Basis(basis).phase
    p = 0.5 * (1.0 + math.cos(a))
    dp = -0.5 * math.sin(a)
    if p <= 0.0 or p >= 1.0:
        raise ValueError("information is a 0/0 limit where cos(x) = +/-1")
    return dp * dp / p + dp * dp / (1.0 - p)


def unit_information() -> float:
    """Information of any single measurement in this protocol: identically 1."""
    return 1.0


@dataclass(frozen=True)
class FisherBreakdown:
    separable_term: float
    entangled_terms: tuple[float, ...]  # index m-1

    @property
    def total(self) -> float:
        return self.separable_term + math.fsum(self.entangled_terms)


def total_information(params: ProtocolParams) -> FisherBreakdown:
    n = params.n_bobs
    p_m, p_f = params.p_measure, params.p_fidelity
    unit = unit_information()
    separable = params.p_separable * p_m * unit / n
    entangled = tuple(
        params.p_entangled * p_m**m * p_f ** (n - m) * (m / n) * math.comb(n - 1, m - 1) * unit
        for m in range(1, n + 1)
    )
    return FisherBreakdown(separable, entangled)


def fisher_matrix_information(params: ProtocolParams) -> float:
    """Information on theta from the full per-round Fisher matrix of the phases.

    Every subset S of Bobs measured together adds ``P(S) 1_S 1_S^T``; theta
    has information ``1 / (u^T F^+ u)`` with u the all-ones vector.
    """
    n = params.n_bobs
    fisher = np.eye(n) * params.p_separable * params.p_measure
    for m in range(1, n + 1):
        weight = params.p_entangled * params.p_measure**m * params.p_fidelity ** (n - m)
        for subset in itertools.combinations(range(n), m):
            v = np.zeros(n)
            v[list(subset)] = 1.0
            fisher += weight * np.outer(v, v)
    u = np.ones(n)
    if np.allclose(fisher, 0.0):
        return 0.0
    variance = float(u @ np.linalg.pinv(fisher) @ u)
    return 1.0 / variance


def crb_variance(params: ProtocolParams, n_rounds: int) -> float:
    info = total_information(params).total
    if info <= 0.0:
        raise ZeroInformationError(
            f"no information on theta at P_S={params.p_separable}, P_F={params.p_fidelity}"
        )
    return 1.0 / (n_rounds * info)


def observed_theta_information(
    counts: np.ndarray, phis: np.ndarray, n_rounds: int, step: float = 1e-4
) -> float:
    """Per-round information on theta from the curvature of the log-likelihood.

    ``counts`` is an evidence table of shape ``(2**N, 4)``; the Hessian over
    the N phases is taken by central differences at ``phis``.
    """
    phis = np.asarray(phis, dtype=float)
    n = phis.size
    keys = np.flatnonzero(counts.sum(axis=1))
    members = ((keys[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    shifts = np.arange(4) * (math.pi / 2.0)
    table = counts[keys].astype(float)

    def loglik(phi: np.ndarray) -> float:
        combo = members @ phi
        return float(np.sum(table * np.log(0.5 * (1.0 + np.cos(combo[:, None] + shifts)))))

    hessian = np.zeros((n, n))
    eye = np.eye(n) * step
    for i in range(n):
        for j in range(i, n):
            h = (
                loglik(phis + eye[i] + eye[j])
                - loglik(phis + eye[i] - eye[j])
                - loglik(phis - eye[i] + eye[j])
                + loglik(phis - eye[i] - eye[j])
            ) / (4.0 * step * step)
            hessian[i, j] = hessian[j, i] = h
    u = np.ones(n)
    variance = float(u @ np.linalg.pinv(-hessian) @ u)
    return 1.0 / (variance * n_rounds)
