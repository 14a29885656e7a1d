import math

import numpy as np
import pytest

from sqrs.adversary import AttackKind, AttackStrategy
from sqrs.optimizer import (
    LOG_FIELDS,
    SearchConfig,
    evaluate_point,
    refine_search,
    write_log_csv,
    write_summary,
)

SMALL = dict(n_bobs=2, n_rounds=60, initial_points=3, refinements=2, repetitions=2, truth_sets=6, seed=4)


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(2, 10, lambda_e_threshold=2.5)
    with pytest.raises(ValueError):
        SearchConfig(2, 10, initial_points=1)
    with pytest.raises(ValueError):
        SearchConfig(2, 10, p_s_values=(1.5,))
    assert SearchConfig(2, 10, initial_points=11, refinements=3).lattice_size == 80


def test_no_measurement_point_gives_uniform_posterior():
    r = evaluate_point(1.0, 1.0, SearchConfig(**SMALL))
    assert r.lambda_a == pytest.approx(1.0)


def test_no_checks_means_never_detected():
    r = evaluate_point(0.5, 0.0, SearchConfig(**SMALL))
    assert r.undetected_fraction == 1.0
    assert math.isnan(r.mean_rounds_to_detection)


def test_mean_rounds_to_detection_is_geometric():
    config = SearchConfig(1, 100, strategy=AttackStrategy(AttackKind.REPLACE_SEPARABLE), repetitions=50, truth_sets=20)
    r = evaluate_point(1.0, 0.5, config)
    d = 0.5 / 4
    mean, sd = 1 / d, math.sqrt(1 - d) / d
    # the horizon truncates a negligible (7/8)^100 tail
    assert abs(r.mean_rounds_to_detection - mean) < 3 * sd / math.sqrt(1000)


def test_threshold_zero_accepts_the_unconstrained_minimum():
    result = refine_search(SearchConfig(lambda_e_threshold=0.0, **SMALL))
    assert result.feasible
    assert result.best.lambda_a == min(r.lambda_a for r in result.log)


def test_threshold_two_is_infeasible_with_frontier():
    result = refine_search(SearchConfig(lambda_e_threshold=2.0, **SMALL))
    assert not result.feasible
    assert len(result.grids) == 1
    assert [r.p_s for r in result.frontier] == [0.0, 0.5, 1.0]
    assert "frontier" in result.summary()


def test_refinement_halves_spacing_and_keeps_seed_points():
    result = refine_search(SearchConfig(lambda_e_threshold=0.3, **SMALL))
    spacings = []
    for grid in result.grids:
        ps = sorted({p for p, _ in grid})
        pf = sorted({f for _, f in grid})
        gaps = [b - a for a, b in zip(pf, pf[1:])] + [b - a for a, b in zip(ps, ps[1:])]
        spacings.append(min(gaps))
    for a, b in zip(spacings, spacings[1:]):
        assert b == pytest.approx(a / 2)
    assert result.best.lambda_e >= 0.3
    # points are evaluated once each
    keys = [(r.p_s, r.p_f) for r in result.log]
    assert len(keys) == len(set(keys))


def test_fixed_p_s_search_stays_in_its_column():
    result = refine_search(SearchConfig(lambda_e_threshold=0.3, p_s_values=(1.0,), **SMALL))
    assert {r.p_s for r in result.log} == {1.0}


def test_fixed_p_f_values():
    result = refine_search(SearchConfig(lambda_e_threshold=0.0, p_s_values=(0.0,), p_f_values=(0.0,), **SMALL))
    assert [(r.p_s, r.p_f) for r in result.log] == [(0.0, 0.0)]
    with pytest.raises(ValueError):
        refine_search(SearchConfig(p_f_values=(0.3,), **SMALL))


def test_search_is_reproducible(tmp_path):
    a = refine_search(SearchConfig(lambda_e_threshold=0.3, **SMALL))
    b = refine_search(SearchConfig(lambda_e_threshold=0.3, **SMALL))
    write_log_csv(tmp_path / "a.csv", a.log)
    write_log_csv(tmp_path / "b.csv", b.log)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(LOG_FIELDS)
    write_summary(tmp_path / "s.json", a)
    assert '"feasible": true' in (tmp_path / "s.json").read_text()


def test_worker_processes_do_not_change_results(tmp_path):
    one = refine_search(SearchConfig(lambda_e_threshold=0.3, **SMALL))
    two = refine_search(SearchConfig(lambda_e_threshold=0.3, threads=2, **SMALL))
    write_log_csv(tmp_path / "one.csv", one.log)
    write_log_csv(tmp_path / "two.csv", two.log)
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
