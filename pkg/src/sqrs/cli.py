"""Command-line experiment runner.

Every command reads a YAML config (``--config``), writes plain CSV/JSON
files into ``--out`` and is deterministic for a given ``--seed``.

Exit codes: 0 success, 1 configuration error, 2 infeasible optimization,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import adversary
from .adversary import AttackKind, AttackStrategy
from .config import ConfigError, load_config
from .fisher import crb_variance, total_information, ZeroInformationError
from .inference import EvidenceSet, lambda_dispersion, theta_posterior
from .montecarlo import (
    alice_lambda_curve,
    draw_truth_sets,
    eve_lambda_curve,
    repeat_truths,
    stream,
    worker_pool,
)
from .optimizer import SearchConfig, refine_search, write_log_csv, write_summary
from .protocol import (
    ProtocolParams,
    TrueParameters,
    alice_observations,
    run_protocol,
    write_transcripts,
)
from .security import (
    MULTI_BOB_CAP,
    SINGLE_BOB_CAP,
    lambda_e_lower_bound,
    per_round_rates,
)

log = logging.getLogger("sqrs")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3
_SIMULATE_TAG, _CURVE_TAG, _FIGURE4_TAG = 10, 3, 4


class InvariantViolation(RuntimeError):
    """A computed quantity left its mathematically allowed range."""


def _check_lambda(value: float, what: str) -> float:
    if not (math.isnan(value) or -1e-9 <= value <= 2.0 + 1e-9):
        raise InvariantViolation(f"{what} = {value} outside [0, 2]")
    return value


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_columns(path: Path, columns: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, text in columns.items():
            fh.write(f"{name}: {text}\n")


def _linspace(points: int) -> list[float]:
    return [float(v) for v in np.linspace(0.0, 1.0, points)]


# simulate ------------------------------------------------------------------

def cmd_simulate(cfg, seed: int, out: Path, threads: int) -> int:
    params = ProtocolParams(cfg.n_bobs, cfg.n_rounds, cfg.p_separable, cfg.p_fidelity)
    if cfg.phis is not None:
        truth = TrueParameters(tuple(cfg.phis))
    else:
        truth = TrueParameters(tuple(float(v) for v in draw_truth_sets(cfg.n_bobs, 1, seed)[0]))
    attack = cfg.attack.build() if cfg.attack else None

    lam_a, lam_e, detection_rounds = [], [], []
    for trial in range(cfg.trials):
        rounds = run_protocol(params, truth, attack, cfg.stop_on_detection, stream(seed, _SIMULATE_TAG, trial))
        alice = theta_posterior(EvidenceSet.from_observations(cfg.n_bobs, alice_observations(rounds)), cfg.bins)
        lam_a.append(_check_lambda(lambda_dispersion(alice, truth.theta), "lambda_alice"))
        first = next((i + 1 for i, t in enumerate(rounds) if t.detected), 0)
        detection_rounds.append(first)
        eve = None
        if attack is not None:
            stop = first if cfg.stop_on_detection and first else len(rounds)
            evidence = EvidenceSet(cfg.n_bobs)
            for t in rounds[:stop]:
                evidence.extend(adversary.eve_observe(t.bob_records, t.attack_record))
            eve = theta_posterior(evidence, cfg.bins)
            lam_e.append(_check_lambda(lambda_dispersion(eve, truth.theta), "lambda_eve"))
        if trial == 0:
            write_transcripts(out / "transcripts.jsonl", rounds)
            alice.to_csv(out / "posterior_alice.csv")
            if eve is not None:
                eve.to_csv(out / "posterior_eve.csv")

    hits = [r for r in detection_rounds if r > 0]
    summary = {
        "n_bobs": cfg.n_bobs,
        "n_rounds": cfg.n_rounds,
        "p_separable": cfg.p_separable,
        "p_fidelity": cfg.p_fidelity,
        "attack": None if attack is None else {"strategy": attack.kind.value, "attack_probability": attack.attack_probability},
        "phis": list(truth.phis),
        "theta": truth.theta,
        "trials": cfg.trials,
        "detected_count": len(hits),
        "undetected_fraction": 1.0 - len(hits) / cfg.trials,
        "mean_rounds_to_detection": float(np.mean(hits)) if hits else None,
        "lambda_alice": float(np.mean(lam_a)),
        "lambda_eve": float(np.mean(lam_e)) if lam_e else None,
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


# security maps -------------------------------------------------------------

def _curve_task(args):
    n_bobs, p_s, p_f, kind, n_cap, phis, seed, index, bins = args
    rng = stream(seed, _CURVE_TAG, index, n_bobs, _code(p_s), _code(p_f))
    return eve_lambda_curve(n_bobs, p_s, p_f, AttackStrategy(kind), n_cap, phis, rng, bins=bins)


def _code(p: float) -> int:
    return int(round(p * (1 << 20)))


def security_map_rows(kind, n_bobs, p_s_values, p_f_values, cfg, seed, pmap):
    """Rows ``(p_s, p_f, d_s, d_e, bound)``; one Eve curve per grid point.

    ``cfg`` is a security-map or figure config.
    """
    n_cap = getattr(cfg, "n_cap", None) or (SINGLE_BOB_CAP if n_bobs == 1 else MULTI_BOB_CAP)
    phis = repeat_truths(draw_truth_sets(n_bobs, cfg.curve_truth_sets, seed), cfg.curve_repetitions)
    index = list(AttackKind).index(kind)
    points = [(p_s, p_f) for p_s in p_s_values for p_f in p_f_values]
    curves = pmap(_curve_task, [(n_bobs, p_s, p_f, kind, n_cap, phis, seed, index, cfg.bins) for p_s, p_f in points])
    strategy = AttackStrategy(kind)
    rows = []
    for (p_s, p_f), curve in zip(points, curves):
        params = ProtocolParams(n_bobs, 1, p_s, p_f)
        dist = per_round_rates(strategy, params, cfg.detection_model)
        bound = _check_lambda(lambda_e_lower_bound(strategy, params, curve, cfg.detection_model), "bound")
        rows.append((p_s, p_f, dist.d_s, dist.d_e, bound))
    return rows


MAP_HEADER = ["p_s", "p_f", "d_s", "d_e", "lambda_e_bound"]


def cmd_security_map(cfg, seed: int, out: Path, threads: int) -> int:
    p_s_values, p_f_values = _linspace(cfg.p_s_points), _linspace(cfg.p_f_points)
    with worker_pool(threads) as pmap:
        for kind in cfg.strategies:
            for n_bobs in cfg.n_bobs:
                rows = security_map_rows(kind, n_bobs, p_s_values, p_f_values, cfg, seed, pmap)
                _write_csv(out / f"security_map_{kind.value}_nb{n_bobs}.csv", MAP_HEADER, rows)
    return EXIT_OK


# optimize ------------------------------------------------------------------

def cmd_optimize(cfg, seed: int, out: Path, threads: int) -> int:
    config = SearchConfig(
        n_bobs=cfg.n_bobs,
        n_rounds=cfg.n_rounds,
        strategy=AttackStrategy(cfg.strategy),
        lambda_e_threshold=cfg.lambda_e_threshold,
        initial_points=cfg.initial_points,
        refinements=cfg.refinements,
        repetitions=cfg.repetitions,
        truth_sets=cfg.truth_sets,
        p_s_values=None if cfg.p_s_values is None else tuple(cfg.p_s_values),
        p_f_values=None if cfg.p_f_values is None else tuple(cfg.p_f_values),
        seed=seed,
        bins=cfg.bins,
        threads=threads,
    )
    result = refine_search(config)
    for r in result.log:
        _check_lambda(r.lambda_a, "lambda_a")
        _check_lambda(r.lambda_e, "lambda_e")
    write_log_csv(out / "evaluation_log.csv", result.log)
    write_summary(out / "best_point.json", result)
    if not result.feasible:
        log.error("no grid point reached lambda_e >= %s; frontier written to best_point.json", config.lambda_e_threshold)
        return EXIT_INFEASIBLE
    return EXIT_OK


# fisher --------------------------------------------------------------------

FISHER_HEADER = ["n_bobs", "n_rounds", "p_s", "p_f", "separable_term", "entangled_term", "i_total", "crb_variance", "unbounded"]


def fisher_rows(cfg):
    for n_bobs in cfg.n_bobs:
        for p_s in cfg.p_s_values:
            for p_f in cfg.p_f_values:
                params = ProtocolParams(n_bobs, cfg.n_rounds, p_s, p_f)
                info = total_information(params)
                try:
                    crb, unbounded = crb_variance(params, cfg.n_rounds), False
                except ZeroInformationError:
                    crb, unbounded = math.inf, True
                yield (n_bobs, cfg.n_rounds, p_s, p_f, info.separable_term, math.fsum(info.entangled_terms), info.total, crb, unbounded)


def cmd_fisher(cfg, seed: int, out: Path, threads: int) -> int:
    _write_csv(out / "fisher.csv", FISHER_HEADER, fisher_rows(cfg))
    return EXIT_OK


# figures -------------------------------------------------------------------

APPROACHES = {"hybrid": None, "separable": (1.0,), "entangled": (0.0,)}

FIGURE23_COLUMNS = {
    "n_bobs": "number of Bobs",
    "n_rounds": "maximum number of protocol rounds",
    "approach": "hybrid (P_S searched), separable (P_S=1) or entangled (P_S=0)",
    "feasible": "whether any grid point met the Eve dispersion threshold",
    "p_s": "optimized probability of a separable round",
    "p_f": "optimized fidelity-check probability per Bob",
    "lambda_a": "Alice's mean dispersion without an attack",
    "lambda_a_err": "standard error of lambda_a",
    "lambda_e": "Eve's mean dispersion, stopping at the first detection",
    "lambda_e_err": "standard error of lambda_e",
    "undetected_fraction": "fraction of attacked executions never detected",
    "mean_rounds_to_detection": "mean 1-based round of the first detection",
}


def _optimized_rows(cfg, seed, threads):
    rows = []
    for n_rounds in cfg.n_rounds:
        for n_bobs in cfg.n_bobs:
            for approach, fixed in APPROACHES.items():
                config = SearchConfig(
                    n_bobs=n_bobs, n_rounds=n_rounds, strategy=AttackStrategy(cfg.strategy),
                    lambda_e_threshold=cfg.lambda_e_threshold, initial_points=cfg.initial_points,
                    refinements=cfg.refinements, repetitions=cfg.repetitions, truth_sets=cfg.truth_sets,
                    p_s_values=fixed, seed=seed, bins=cfg.bins, threads=threads,
                )
                best = refine_search(config).best
                if best is None:
                    rows.append((n_bobs, n_rounds, approach, False) + (math.nan,) * 8)
                    continue
                rows.append((
                    n_bobs, n_rounds, approach, True, best.p_s, best.p_f,
                    _check_lambda(best.lambda_a, "lambda_a"), best.lambda_a_err,
                    _check_lambda(best.lambda_e, "lambda_e"), best.lambda_e_err,
                    best.undetected_fraction, best.mean_rounds_to_detection,
                ))
    return rows


def figure_2(cfg, seed, out, threads):
    """Optimized dispersion per approach (the undetected statistics feed figure 3)."""
    _write_csv(out / "figure2.csv", list(FIGURE23_COLUMNS), _optimized_rows(cfg, seed, threads))
    _write_columns(out / "figure2.columns.txt", FIGURE23_COLUMNS)


def figure_3(cfg, seed, out, threads):
    keep = ["n_bobs", "n_rounds", "approach", "feasible", "undetected_fraction", "mean_rounds_to_detection", "p_f", "p_s"]
    index = [list(FIGURE23_COLUMNS).index(k) for k in keep]
    rows = [[row[i] for i in index] for row in _optimized_rows(cfg, seed, threads)]
    _write_csv(out / "figure3.csv", keep, rows)
    _write_columns(out / "figure3.columns.txt", {k: FIGURE23_COLUMNS[k] for k in keep})


def _figure4_task(args):
    n_bobs, series, p_s, p_f, round_counts, phis, seed, series_index, bins = args
    rng = stream(seed, _FIGURE4_TAG, n_bobs, series_index)
    return alice_lambda_curve(n_bobs, p_s, p_f, round_counts, phis, rng, bins)


def figure_4(cfg, seed, out, threads):
    series = [
        ("separable", 1.0, 0.0),
        ("entangled", 0.0, 0.0),
        ("hybrid", cfg.hybrid_p_separable, cfg.hybrid_p_fidelity),
    ]
    tasks = []
    for n_bobs in cfg.n_bobs:
        phis = repeat_truths(draw_truth_sets(n_bobs, cfg.truth_sets, seed), cfg.repetitions)
        for k, (name, p_s, p_f) in enumerate(series):
            tasks.append((n_bobs, name, p_s, p_f, cfg.round_counts, phis, seed, k, cfg.bins))
    with worker_pool(threads) as pmap:
        curves = pmap(_figure4_task, tasks)
    rows = []
    for task, (mean, err) in zip(tasks, curves):
        n_bobs, name, p_s, p_f = task[:4]
        for n, m, e in zip(cfg.round_counts, mean, err):
            rows.append((n_bobs, name, p_s, p_f, n, _check_lambda(float(m), "lambda_a"), float(e), n_bobs / n, 1.0 / n))
    columns = {
        "n_bobs": "number of Bobs",
        "series": "separable (P_S=1, P_F=0), entangled (P_S=0, P_F=0) or hybrid (configured point)",
        "p_s": "probability of a separable round",
        "p_f": "fidelity-check probability per Bob",
        "n_rounds": "number of honest rounds",
        "lambda_a": "Alice's mean dispersion",
        "lambda_a_err": "standard error of lambda_a",
        "crb_separable": "Cramer-Rao variance with separable probes, N_B/N_R",
        "crb_entangled": "Cramer-Rao variance with GHZ probes, 1/N_R",
    }
    _write_csv(out / "figure4.csv", list(columns), rows)
    _write_columns(out / "figure4.columns.txt", columns)


def figure_5(cfg, seed, out, threads):
    p_f_values = _linspace(cfg.p_f_points)
    rows = []
    with worker_pool(threads) as pmap:
        for kind in (AttackKind.MEASURE_RESEND_SEPARABLE, AttackKind.REPLACE_SEPARABLE):
            for p_s, p_f, d_s, d_e, bound in security_map_rows(kind, 1, [1.0], p_f_values, cfg, seed, pmap):
                rows.append((kind.value, p_f, d_s + d_e, bound))
    columns = {
        "strategy": "measure-and-resend or replace attack on a single Bob",
        "p_f": "fidelity-check probability",
        "d": "per-round detection probability",
        "lambda_e_bound": "lower bound on Eve's mean dispersion",
    }
    _write_csv(out / "figure5.csv", list(columns), rows)
    _write_columns(out / "figure5.columns.txt", columns)


def figure_6(cfg, seed, out, threads):
    """Bound maps for GHZ and separable measure-and-resend, plus their difference."""
    p_s_values, p_f_values = _linspace(cfg.p_s_points), _linspace(cfg.p_f_points)
    rows = []
    with worker_pool(threads) as pmap:
        for n_bobs in cfg.n_bobs:
            ent = security_map_rows(AttackKind.MEASURE_RESEND_ENTANGLED, n_bobs, p_s_values, p_f_values, cfg, seed, pmap)
            sep = security_map_rows(AttackKind.MEASURE_RESEND_SEPARABLE, n_bobs, p_s_values, p_f_values, cfg, seed, pmap)
            for e, s in zip(ent, sep):
                rows.append((n_bobs, e[0], e[1], e[4], s[4], e[4] - s[4]))
    columns = {
        "n_bobs": "number of Bobs",
        "p_s": "probability of a separable round",
        "p_f": "fidelity-check probability per Bob",
        "bound_entangled_resend": "Eve dispersion bound, measure-and-resend with GHZ states",
        "bound_separable_resend": "Eve dispersion bound, measure-and-resend with separable states",
        "difference": "bound_entangled_resend - bound_separable_resend",
    }
    _write_csv(out / "figure6.csv", list(columns), rows)
    _write_columns(out / "figure6.columns.txt", columns)


FIGURES = {2: figure_2, 3: figure_3, 4: figure_4, 5: figure_5, 6: figure_6}


def cmd_figure(cfg, seed: int, out: Path, threads: int, figure_id: int) -> int:
    FIGURES[figure_id](cfg, seed, out, threads)
    return EXIT_OK


# entry point ---------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "security-map": cmd_security_map,
    "optimize": cmd_optimize,
    "fisher": cmd_fisher,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqrs", description="Secure quantum remote sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in COMMANDS:
        common(sub.add_parser(name))
    fig = sub.add_parser("figure")
    fig.add_argument("figure_id", type=int, help="figure number, 2 to 6")
    common(fig)
    return parser


def _resolve_seed(cli_seed, cfg) -> int:
    seed = cli_seed if cli_seed is not None else (getattr(cfg, "seed", None) or 0)
    if not 0 <= seed < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "figure" and args.figure_id not in FIGURES:
            raise ConfigError(f"unknown figure {args.figure_id}; choose from {sorted(FIGURES)}")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.command, args.config)
        seed = _resolve_seed(args.seed, cfg)
        args.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "figure":
            return cmd_figure(cfg, seed, args.out, args.threads, args.figure_id)
        return COMMANDS[args.command](cfg, seed, args.out, args.threads)
    except (InvariantViolation, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
