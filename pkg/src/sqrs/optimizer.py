"""Security-constrained grid-refinement search over (P_S, P_F).

Grid points live on an integer lattice whose unit is the final spacing, so
refined grids line up exactly with earlier ones and every point is
evaluated once. Each point gets its own random stream derived from the
master seed and its lattice coordinates.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversary import AttackKind, AttackStrategy
from .inference import GRID_BINS
from .montecarlo import alice_lambdas, attack_run, draw_truth_sets, repeat_truths, stream, worker_pool

_ALICE_TAG, _EVE_TAG = 1, 2
_CODE_SCALE = 1 << 20


@dataclass(frozen=True)
class SearchConfig:
    n_bobs: int
    n_rounds: int
    strategy: AttackStrategy = AttackStrategy(AttackKind.MEASURE_RESEND_ENTANGLED)
    lambda_e_threshold: float = 0.5
    initial_points: int = 11
    refinements: int = 3
    repetitions: int = 16
    truth_sets: int = 64
    p_s_values: tuple[float, ...] | None = None  # fixes P_S, e.g. (1.0,) for separable only
    p_f_values: tuple[float, ...] | None = None  # restricts P_F to these values
    seed: int = 0
    bins: int = GRID_BINS
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lambda_e_threshold <= 2.0:
            raise ValueError("lambda_e_threshold must lie in [0, 2]")
        if self.initial_points < 2:
            raise ValueError("initial_points must be at least 2")
        if self.refinements < 0 or self.repetitions < 1 or self.truth_sets < 1:
            raise ValueError("refinements >= 0, repetitions >= 1 and truth_sets >= 1 required")
        for name in ("p_s_values", "p_f_values"):
            values = getattr(self, name)
            if values is None:
                continue
            values = tuple(sorted({float(v) for v in values}))
            if not values or any(not 0.0 <= v <= 1.0 for v in values):
                raise ValueError(f"{name} must be probabilities")
            object.__setattr__(self, name, values)

    @property
    def lattice_size(self) -> int:
        """Number of final-resolution steps across [0, 1]."""
        return (self.initial_points - 1) << self.refinements


@dataclass(frozen=True)
class GridPointResult:
    p_s: float
    p_f: float
    lambda_a: float
    lambda_a_err: float
    lambda_e: float
    lambda_e_err: float
    undetected_fraction: float
    mean_rounds_to_detection: float

    def feasible(self, threshold: float) -> bool:
        return self.lambda_e >= threshold


LOG_FIELDS = [f.name for f in GridPointResult.__dataclass_fields__.values()]


def _point_code(p: float) -> int:
    return int(round(p * _CODE_SCALE))


def _stderr(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0


def evaluate_point(p_s: float, p_f: float, config: SearchConfig, phis: np.ndarray | None = None) -> GridPointResult:
    """Alice's honest dispersion and Eve's stop-at-detection statistics at one point."""
    if phis is None:
        phis = draw_truth_sets(config.n_bobs, config.truth_sets, config.seed)
    execs = repeat_truths(phis, config.repetitions)
    code = (_point_code(p_s), _point_code(p_f))
    lam_a = alice_lambdas(
        config.n_bobs, p_s, p_f, config.n_rounds, execs, stream(config.seed, _ALICE_TAG, *code), config.bins
    )
    run = attack_run(
        config.n_bobs, p_s, p_f, config.n_rounds, execs, config.strategy,
        stream(config.seed, _EVE_TAG, *code), config.bins,
    )
    return GridPointResult(
        p_s=p_s,
        p_f=p_f,
        lambda_a=float(lam_a.mean()),
        lambda_a_err=_stderr(lam_a),
        lambda_e=float(run.lambdas.mean()),
        lambda_e_err=_stderr(run.lambdas),
        undetected_fraction=run.undetected_fraction,
        mean_rounds_to_detection=run.mean_rounds_to_detection,
    )


def _evaluate_task(args):
    p_s, p_f, config, phis = args
    return evaluate_point(p_s, p_f, config, phis)


def _rank(result: GridPointResult):
    """Sort key: smaller Lambda_A, then larger Lambda_E, then larger P_F."""
    return (result.lambda_a, -result.lambda_e, -result.p_f)


@dataclass
class SearchResult:
    best: GridPointResult | None
    log: list[GridPointResult]
    grids: list[list[tuple[float, float]]]
    threshold: float
    frontier: list[GridPointResult] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.best is not None

    def summary(self) -> dict:
        out = {
            "feasible": self.feasible,
            "lambda_e_threshold": self.threshold,
            "points_evaluated": len(self.log),
            "grid_sizes": [len(g) for g in self.grids],
            "best": asdict(self.best) if self.best else None,
        }
        if not self.feasible:
            out["frontier"] = [asdict(r) for r in self.frontier]
        return out


def _column_minimizers(points, results, threshold):
    """Per P_S column, the lattice index of the feasible Lambda_A minimizer."""
    by_column: dict[int, list[tuple[int, int]]] = {}
    for i, j in points:
        by_column.setdefault(i, []).append((i, j))
    winners = {}
    for i, members in by_column.items():
        feasible = [p for p in members if results[p].feasible(threshold)]
        if feasible:
            winners[i] = min(feasible, key=lambda p: _rank(results[p]))[1]
    return winners


def _next_grid(points, results, threshold, step, fixed_columns, lattice):
    """Half-spacing grid around the best column and its neighbors.

    Every retained column contributes its feasible minimizer +/- one old
    step in P_F; columns at the new half steps take the union of the P_F
    ranges of the two retained columns they sit between.
    """
    winners = _column_minimizers(points, results, threshold)
    if not winners:
        return None
    best_col = min(winners, key=lambda i: _rank(results[(i, winners[i])]))
    if fixed_columns:
        kept = sorted(winners)
    else:
        kept = [i for i in (best_col - step, best_col, best_col + step) if i in winners]
    ranges = {i: (max(0, winners[i] - step), min(lattice, winners[i] + step)) for i in kept}

    half = step // 2
    if fixed_columns:
        columns = {i: ranges[i] for i in kept}
    else:
        columns = {}
        for i in range(kept[0], kept[-1] + 1, half):
            near = [c for c in kept if abs(c - i) < step]
            columns[i] = (min(ranges[c][0] for c in near), max(ranges[c][1] for c in near))
    return sorted((i, j) for i, (lo, hi) in columns.items() for j in range(lo, hi + 1, half))


def _lattice_indices(values: tuple[float, ...], lattice: int) -> list[int]:
    indices = [int(round(v * lattice)) for v in values]
    if any(abs(i / lattice - v) > 1e-9 for i, v in zip(indices, values)):
        raise ValueError("fixed probabilities must lie on the final search lattice")
    return indices


def refine_search(config: SearchConfig) -> SearchResult:
    lattice = config.lattice_size
    step = 1 << config.refinements
    unit = 1.0 / lattice
    phis = draw_truth_sets(config.n_bobs, config.truth_sets, config.seed)

    if config.p_s_values is not None:
        ps_axis = _lattice_indices(config.p_s_values, lattice)
    else:
        ps_axis = range(0, lattice + 1, step)
    if config.p_f_values is not None:
        allowed_pf = set(_lattice_indices(config.p_f_values, lattice))
        pf_axis = sorted(allowed_pf)
    else:
        allowed_pf = None
        pf_axis = range(0, lattice + 1, step)
    points = sorted((i, j) for i in ps_axis for j in pf_axis)

    results: dict[tuple[int, int], GridPointResult] = {}
    log: list[GridPointResult] = []
    grids = []
    with worker_pool(config.threads) as pmap:
        for level in range(config.refinements + 1):
            grids.append([(i * unit, j * unit) for i, j in points])
            todo = [p for p in points if p not in results]
            tasks = [(i * unit, j * unit, config, phis) for i, j in todo]
            evaluated = pmap(_evaluate_task, tasks)
            for p, r in zip(todo, evaluated):
                results[p] = r
                log.append(r)
            if level == config.refinements:
                break
            nxt = _next_grid(points, results, config.lambda_e_threshold, step, config.p_s_values is not None, lattice)
            if nxt is None:
                break
            if allowed_pf is not None:
                nxt = [p for p in nxt if p[1] in allowed_pf]
            points, step = nxt, step // 2

    feasible = [r for r in log if r.feasible(config.lambda_e_threshold)]
    best = min(feasible, key=_rank) if feasible else None
    frontier = []
    if best is None:
        columns: dict[float, GridPointResult] = {}
        for r in log:
            if r.p_s not in columns or (r.lambda_e, r.p_f) > (columns[r.p_s].lambda_e, columns[r.p_s].p_f):
                columns[r.p_s] = r
        frontier = [columns[k] for k in sorted(columns)]
    return SearchResult(best, log, grids, config.lambda_e_threshold, frontier)


def write_log_csv(path: str | Path, results: Sequence[GridPointResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for r in results:
            writer.writerow([_fmt(getattr(r, name)) for name in LOG_FIELDS])


def write_summary(path: str | Path, result: SearchResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
