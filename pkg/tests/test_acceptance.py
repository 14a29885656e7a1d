"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Statistical criteria run at fixed seeds, so every outcome is reproducible.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats

from sqrs.adversary import AttackKind, AttackStrategy, exact_detection_probability
from sqrs.cli import main
from sqrs.engine import simulate_rounds
from sqrs.fisher import observed_theta_information, total_information
from sqrs.inference import LikelihoodGrid, circular_convolve, lambda_dispersion
from sqrs.montecarlo import attack_run, draw_truth_sets, eve_lambda_curve, repeat_truths, stream
from sqrs.optimizer import SearchConfig, evaluate_point, refine_search
from sqrs.protocol import ProtocolParams, TrueParameters, run_round
from sqrs.qstate import (
    Basis,
    PrepKind,
    ProbePreparation,
    ghz_parity_prob,
    separable_outcome_prob,
    state_vector_oracle,
)
from sqrs.security import lambda_e_lower_bound, per_round_rates

from conftest import binomial_z

pytestmark = pytest.mark.acceptance

MRE = AttackStrategy(AttackKind.MEASURE_RESEND_ENTANGLED)


def test_01_measurement_law_matches_state_vector(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for n in range(1, 5):
        for _ in range(8):
            chis = tuple(int(v) for v in rng.integers(0, 4, n))
            phis = [None if rng.random() < 0.3 else float(v) for v in rng.uniform(0, 2 * math.pi, n)]
            for bases in itertools.product(list(Basis), repeat=n):
                sep = ProbePreparation(PrepKind.SEPARABLE, chis)
                singles = [
                    separable_outcome_prob(c, 0.0 if p is None else p, b) for c, p, b in zip(sep.angles, phis, bases)
                ]
                for outcome, p in state_vector_oracle(sep, phis, bases).items():
                    analytic = math.prod(s if o == 1 else 1 - s for s, o in zip(singles, outcome))
                    worst = max(worst, abs(p - analytic))
                ghz = ProbePreparation(PrepKind.ENTANGLED, chis[:1])
                parity = ghz_parity_prob(ghz.angles[0], sum(p for p in phis if p is not None), bases)
                for outcome, p in state_vector_oracle(ghz, phis, bases).items():
                    target = parity if math.prod(outcome) == 1 else 1 - parity
                    worst = max(worst, abs(p - target / 2 ** (n - 1)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    criterion("1", ok, f"max |analytic - state vector| = {worst:.2e}, {elapsed:.1f} s")
    assert ok


STRATEGIES = list(AttackKind)
PREP_KINDS = [(PrepKind.SEPARABLE, 1.0), (PrepKind.ENTANGLED, 0.0)]


def _detection_cells():
    """Empirical detection counts for every (strategy, prep kind, N_B, P_F) cell."""
    rounds = 10_000
    cells = []
    for k, kind in enumerate(STRATEGIES):
        for prep_kind, p_s in PREP_KINDS:
            for n in (1, 2, 3, 4):
                for p_f in (0.25, 0.5, 0.75):
                    rng = stream(2, k, int(p_s), n, int(p_f * 100))
                    batch = simulate_rounds(n, p_s, p_f, np.full((1, n), 0.9), rounds, AttackStrategy(kind), rng)
                    cells.append((kind, prep_kind, p_s, n, p_f, int(batch.detected.sum()), rounds))
    return cells


@pytest.fixture(scope="module")
def detection_cells():
    return _detection_cells()


def test_02_detection_constants(criterion, detection_cells):
    start = time.perf_counter()
    failures = []
    for kind, prep_kind, p_s, n, p_f, hits, rounds in detection_cells:
        dist = per_round_rates(AttackStrategy(kind), ProtocolParams(n, 1, p_s, p_f))
        expected = dist.d_s + dist.d_e
        z = binomial_z(hits, rounds, expected)
        if abs(z) > 3:
            failures.append(f"{kind.value}|{prep_kind.value} N={n} P_F={p_f}: {hits / rounds:.4f} vs {expected:.4f}")
    elapsed = time.perf_counter() - start
    ok = not failures
    detail = f"{len(detection_cells) - len(failures)}/{len(detection_cells)} cells within 3 sigma of the tabulated rates"
    if failures:
        detail += "; outside: " + "; ".join(failures)
    criterion("2", ok, detail)
    assert ok, detail


def test_02b_detection_against_exact_model(criterion, detection_cells):
    """Companion check of the same samples against the simulated strategies' exact rates."""
    failures = []
    for kind, prep_kind, p_s, n, p_f, hits, rounds in detection_cells:
        z = binomial_z(hits, rounds, exact_detection_probability(kind, prep_kind, n, p_f))
        if abs(z) > 3:
            failures.append(f"{kind.value}|{prep_kind.value} N={n} P_F={p_f} (z={z:.1f})")
    ok = not failures
    criterion("2b", ok, f"{len(detection_cells) - len(failures)}/{len(detection_cells)} cells within 3 sigma of the exact model" + ("; " + "; ".join(failures) if failures else ""))
    assert ok


def test_03_single_bob_rates(criterion):
    rng = np.random.default_rng(3)
    trials = 10_000
    truth = TrueParameters((1.1,))
    lines, ok = [], True
    for kind in STRATEGIES:
        expected_factor = 8 if kind.measures else 4
        for p_f in (0.5, 1.0):
            params = ProtocolParams(1, 1, 0.5, p_f)
            hits = sum(run_round(params, truth, AttackStrategy(kind), rng).detected for _ in range(trials))
            d = p_f / expected_factor
            z = binomial_z(hits, trials, d)
            ok &= abs(z) <= 3
            lines.append(f"{kind.value} P_F={p_f}: {hits / trials:.4f} vs {d:.4f} (z={z:+.1f})")
    criterion("3", ok, "; ".join(lines))
    assert ok


def _chi_square_geometric(first_rounds, d, horizon):
    """Goodness of fit of 1-based detection rounds to (1-d)^(n-1) d."""
    total = len(first_rounds)
    n_max = 1
    while total * (1 - d) ** n_max * d >= 5 and n_max < horizon:
        n_max += 1
    observed = [np.sum(first_rounds == n) for n in range(1, n_max + 1)]
    expected = [total * (1 - d) ** (n - 1) * d for n in range(1, n_max + 1)]
    observed.append(total - sum(observed))
    expected.append(total - sum(expected))
    return stats.chisquare(observed, expected).pvalue


def test_04_rounds_to_detection_is_geometric(criterion):
    lines, ok = [], True
    horizon, executions = 400, 4000
    for kind, d in ((AttackKind.MEASURE_RESEND_SEPARABLE, 1 / 8), (AttackKind.REPLACE_SEPARABLE, 1 / 4)):
        rng = stream(4, list(AttackKind).index(kind))
        batch = simulate_rounds(1, 1.0, 1.0, np.full((executions, 1), 0.5), horizon, AttackStrategy(kind), rng)
        first = batch.first_detection() + 1  # horizon + 1 marks "never", lumped into the tail bin
        p = _chi_square_geometric(first, d, horizon)
        ok &= p >= 0.01
        lines.append(f"{kind.value}: chi-square p = {p:.3f}")
    criterion("4", ok, "; ".join(lines))
    assert ok


def test_05_lambda_anchors(criterion):
    bins = 1024
    step = 2 * math.pi / bins
    theta = 321 * step
    uniform = lambda_dispersion(LikelihoodGrid.uniform(bins), theta)
    at_truth = lambda_dispersion(LikelihoodGrid.delta(theta, bins), theta)
    opposite = lambda_dispersion(LikelihoodGrid.delta(theta + math.pi, bins), theta)
    ok = abs(uniform - 1) <= 1e-9 and at_truth <= 1 - math.cos(step) and opposite >= 2 - (1 - math.cos(step))
    criterion("5", ok, f"uniform {uniform:.12f}, delta at truth {at_truth:.2e}, delta opposite {opposite:.12f}")
    assert ok


def _direct(a, b):
    k = len(a)
    idx = (np.arange(k)[:, None] - np.arange(k)[None, :]) % k
    return b[idx] @ a


def test_06_fft_convolution_oracle(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for bins in (256, 1024):
        for _ in range(100):
            grids = [LikelihoodGrid(rng.random(bins)).normalize() for _ in range(3)]
            fast = circular_convolve(grids)
            ref = _direct(_direct(grids[0].values, grids[1].values), grids[2].values)
            ref = ref / (ref.sum() * fast.spacing)
            worst = max(worst, float(np.max(np.abs(fast.values - ref))))
    ok = worst <= 1e-9
    criterion("6", ok, f"max-abs difference {worst:.2e} over 200 triples")
    assert ok


def test_07_fisher_endpoints_and_curvature(criterion):
    exact = all(
        total_information(ProtocolParams(n, 1, 1.0, 0.0)).total == 1 / n
        and total_information(ProtocolParams(n, 1, 0.0, 0.0)).total == 1.0
        for n in range(1, 9)
    )
    rounds = 10_000
    lines, ok = [], exact
    for n, p_s, p_f in ((1, 0.5, 0.3), (2, 0.5, 0.4), (3, 0.3, 0.2), (3, 1.0, 0.0)):
        phis = np.array([[0.4, 1.3, 2.2][:n]])
        batch = simulate_rounds(n, p_s, p_f, phis, rounds, None, stream(7, n, int(p_s * 10)))
        observed = observed_theta_information(batch.alice_counts()[0], phis[0], rounds)
        expected = total_information(ProtocolParams(n, rounds, p_s, p_f)).total
        rel = abs(observed / expected - 1)
        ok &= rel <= 0.10
        lines.append(f"N={n} P_S={p_s} P_F={p_f}: {observed:.4f} vs {expected:.4f}")
    criterion("7", ok, f"endpoints exact: {exact}; curvature " + "; ".join(lines))
    assert ok


def _search(n_bobs, n_rounds, fixed, initial_points, refinements, repetitions, truth_sets, seed):
    return refine_search(
        SearchConfig(
            n_bobs=n_bobs, n_rounds=n_rounds, strategy=MRE, lambda_e_threshold=0.5,
            initial_points=initial_points, refinements=refinements, repetitions=repetitions,
            truth_sets=truth_sets, p_s_values=fixed, seed=seed,
        )
    )


@pytest.fixture(scope="module")
def scaled_figure2():
    start = time.perf_counter()
    results = {
        name: _search(3, 500, fixed, 5, 2, 32, 16, seed=8)
        for name, fixed in (("hybrid", None), ("separable", (1.0,)), ("entangled", (0.0,)))
    }
    return results, time.perf_counter() - start


def test_08_hybrid_beats_single_kind(criterion, scaled_figure2):
    results, elapsed = scaled_figure2
    best = {k: r.best for k, r in results.items()}
    ok = all(b is not None for b in best.values()) and elapsed < 1800
    lines = []
    if ok:
        h = best["hybrid"]
        strictly_below = False
        for other in ("separable", "entangled"):
            o = best[other]
            sigma = math.hypot(h.lambda_a_err, o.lambda_a_err)
            ok &= h.lambda_a <= o.lambda_a + 2 * sigma
            strictly_below |= h.lambda_a < o.lambda_a
        ok &= strictly_below
    for k, b in best.items():
        lines.append(f"{k} " + ("infeasible" if b is None else f"{b.lambda_a:.5f}+-{b.lambda_a_err:.5f} at P_S={b.p_s}, P_F={b.p_f}"))
    criterion("8", ok, "; ".join(lines) + f"; {elapsed:.0f} s")
    assert ok


def test_09_hybrid_below_separable_bound(criterion, scaled_figure2):
    results, _ = scaled_figure2
    h = results["hybrid"].best
    threshold = 3 / (2 * 500)
    ok = h is not None and h.lambda_a < threshold + 2 * h.lambda_a_err
    detail = f"hybrid {h.lambda_a:.5f}+-{h.lambda_a_err:.5f} vs N_B/(2 N_R) = {threshold:.5f}"
    detail += f" (N_B/N_R = {2 * threshold:.5f})"
    criterion("9", ok, detail)
    assert ok


def test_10_bound_is_below_simulated_eve_dispersion(criterion):
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    n_rounds, violations, checked = 500, [], 0
    for n_bobs in (2, 4):
        curve_phis = repeat_truths(draw_truth_sets(n_bobs, 32, 10), 4)
        run_phis = repeat_truths(draw_truth_sets(n_bobs, 32, 11), 8)
        for kind in (AttackKind.MEASURE_RESEND_ENTANGLED, AttackKind.MEASURE_RESEND_SEPARABLE):
            strategy = AttackStrategy(kind)
            k = list(AttackKind).index(kind)
            for p_s, p_f in itertools.product(grid, grid):
                tags = (n_bobs, k, int(p_s * 100), int(p_f * 100))
                curve = eve_lambda_curve(n_bobs, p_s, p_f, strategy, 50, curve_phis, stream(10, *tags))
                bound = lambda_e_lower_bound(strategy, ProtocolParams(n_bobs, n_rounds, p_s, p_f), curve)
                run = attack_run(n_bobs, p_s, p_f, n_rounds, run_phis, strategy, stream(11, *tags))
                sim = run.lambdas.mean()
                err = run.lambdas.std(ddof=1) / math.sqrt(run.lambdas.size)
                checked += 1
                if bound > sim + 2 * err:
                    violations.append(f"{kind.value} N={n_bobs} P_S={p_s} P_F={p_f}: bound {bound:.3f} > {sim:.3f}+2*{err:.3f}")
    ok = not violations
    criterion("10", ok, f"{checked - len(violations)}/{checked} points sound" + ("; " + "; ".join(violations) if violations else ""))
    assert ok


def test_11_entangled_only_lets_eve_through(criterion):
    n_bobs, n_rounds, trials = 5, 500, 1000
    fractions = {}
    for name, fixed in (("entangled", (0.0,)), ("separable", (1.0,))):
        best = _search(n_bobs, n_rounds, fixed, 5, 2, 8, 16, seed=12).best
        assert best is not None, f"{name}-only search found no feasible point"
        phis = draw_truth_sets(n_bobs, trials, 13)
        run = attack_run(n_bobs, best.p_s, best.p_f, n_rounds, phis, MRE, stream(13, int(fixed[0])))
        fractions[name] = (run.undetected_fraction, best.p_f)
    ok = fractions["entangled"][0] > 0.01 and fractions["separable"][0] < 0.001
    detail = "; ".join(f"{k}-only P_F={pf}: undetected {u:.3%}" for k, (u, pf) in fractions.items())
    criterion("11", ok, detail)
    assert ok


DETERMINISM_RUNS = [
    ("simulate", "n_bobs: 2\nn_rounds: 40\np_separable: 0.5\np_fidelity: 0.4\ntrials: 3\nattack:\n  strategy: measure-resend-entangled\n", []),
    ("security-map", "n_bobs: [2]\np_s_points: 3\np_f_points: 3\ncurve_truth_sets: 2\ncurve_repetitions: 2\nn_cap: 10\n", []),
    ("optimize", "n_bobs: 2\nn_rounds: 40\ninitial_points: 3\nrefinements: 1\nrepetitions: 2\ntruth_sets: 3\n", []),
    ("fisher", "n_bobs: [1, 3]\n", []),
    ("figure", "n_bobs: [2]\nn_rounds: [30]\ninitial_points: 3\nrefinements: 1\nrepetitions: 2\ntruth_sets: 2\nround_counts: [10, 30]\np_s_points: 3\np_f_points: 3\ncurve_truth_sets: 2\ncurve_repetitions: 2\n", ["2", "3", "4", "5", "6"]),
]


def test_12_cli_determinism(criterion, tmp_path):
    mismatches, compared = [], 0
    for command, text, figure_ids in DETERMINISM_RUNS:
        cfg = tmp_path / f"{command}.yaml"
        cfg.write_text(text)
        for extra in ([[f] for f in figure_ids] or [[]]):
            outs = []
            for rep in ("a", "b"):
                out = tmp_path / f"{command}{''.join(extra)}_{rep}"
                code = main([command, *extra, "--config", str(cfg), "--seed", "99", "--out", str(out)])
                assert code == 0
                outs.append(out)
            for path in sorted(outs[0].iterdir()):
                compared += 1
                if path.read_bytes() != (outs[1] / path.name).read_bytes():
                    mismatches.append(f"{command} {' '.join(extra)} {path.name}")
    ok = not mismatches and compared > 0
    criterion("12", ok, f"{compared} output files compared" + ("; differing: " + ", ".join(mismatches) if mismatches else ", all byte-identical"))
    assert ok
