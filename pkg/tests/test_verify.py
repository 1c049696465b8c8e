import math

import numpy as np
import pytest

from conftest import (
    affine_scenario_doc,
    biased_matching_pennies,
    oscillator_scenario_doc,
    pd_scenario_doc,
)
from semgame.engine import TraceRecord
from semgame.errors import InsufficientSignal, NoRecovery
from semgame.metric import EUCLIDEAN, SemanticState
from semgame.scenario import parse_scenario, run_scenario
from semgame.verify import (
    check_geometric_bound,
    entropy_series,
    estimate_lambda,
    fit_singularity_response,
    multi_start_uniqueness,
    nash_at_fixed_point,
    recovery_iterations,
    run_verification,
    state_entropy,
    summarize_entropy,
)


def converged_affine(lam, seed=7, **kw):
    sc = parse_scenario(affine_scenario_doc(lam, seed=seed, **kw))
    result = run_scenario(sc, sample_lipschitz=False)
    assert result.converged
    return sc, result


# ---------------------------------------------------------------------------
# estimate_lambda


@pytest.mark.parametrize("lam,lo,hi", [(0.5, 0.475, 0.525), (0.9, 0.855, 0.945)])
def test_estimate_lambda_affine(lam, lo, hi):
    sc, result = converged_affine(lam)
    est = estimate_lambda(result.trace, EUCLIDEAN, result.final, tol=sc.engine.tol)
    assert lo <= est.lambda_hat <= hi
    assert lo <= est.geometric_mean <= hi
    assert est.samples >= 3


def test_estimate_lambda_both_methods_agree_on_affine():
    sc, result = converged_affine(0.5)
    a = estimate_lambda(result.trace, EUCLIDEAN, result.final, method="to_fixed_point")
    b = estimate_lambda(result.trace, EUCLIDEAN, result.final, method="consecutive_ratio")
    assert a.lambda_hat == pytest.approx(0.5, rel=1e-6)
    assert b.lambda_hat == pytest.approx(0.5, rel=1e-6)


def test_estimate_lambda_rotated_map_within_five_percent():
    sc = parse_scenario(affine_scenario_doc(0.5, rotate=True, name="rot"))
    result = run_scenario(sc, sample_lipschitz=False)
    est = estimate_lambda(result.trace, EUCLIDEAN, result.final, tol=sc.engine.tol)
    assert abs(est.lambda_hat - 0.5) <= 0.05 * 0.5


def test_estimate_lambda_at_fixed_point_insufficient():
    sc = parse_scenario(affine_scenario_doc(0.5))
    fixed = np.linalg.solve(np.eye(sc.dim) - sc.phi.M, sc.phi.b)
    result = run_scenario(sc, initial=SemanticState("E0", fixed), sample_lipschitz=False)
    with pytest.raises(InsufficientSignal):
        estimate_lambda(result.trace, EUCLIDEAN, result.final, tol=sc.engine.tol)


def test_estimate_lambda_consecutive_needs_many_samples():
    sc, result = converged_affine(0.9)
    est = estimate_lambda(
        result.trace, EUCLIDEAN, result.final, tol=sc.engine.tol, method="consecutive_ratio"
    )
    assert est.samples >= 20
    assert abs(est.lambda_hat - 0.9) <= 0.05 * 0.9


# ---------------------------------------------------------------------------
# check_geometric_bound


def test_geometric_bound_exact_contraction_passes():
    sc, result = converged_affine(0.5)
    chk = check_geometric_bound(result.trace, EUCLIDEAN, result.final, 0.5 * 1.001)
    assert chk.passed and chk.first_violation is None


def test_geometric_bound_fails_at_half_lambda():
    sc, result = converged_affine(0.5)
    chk = check_geometric_bound(result.trace, EUCLIDEAN, result.final, 0.25)
    assert not chk.passed
    assert chk.first_violation == 1


def test_geometric_bound_single_record_vacuous():
    state = SemanticState("s", np.array([1.0, 2.0]))
    trace = [TraceRecord(n=0, state=state, d_step=None)]
    chk = check_geometric_bound(trace, EUCLIDEAN, state, 0.5)
    assert chk.passed


def test_geometric_bound_rejects_bad_lambda():
    with pytest.raises(ValueError):
        check_geometric_bound([], EUCLIDEAN, SemanticState("s", np.ones(2)), 1.5)


# ---------------------------------------------------------------------------
# multi_start_uniqueness


def test_multi_start_collapses_on_contraction():
    sc = parse_scenario(affine_scenario_doc(0.5))
    ms = multi_start_uniqueness(10, sc, radius=100.0, seed=11)
    assert ms.all_converged
    assert ms.max_pairwise <= 1e-6
    assert ms.passed


def test_multi_start_identity_map_keeps_spread():
    doc = affine_scenario_doc(0.5, name="identity-diag")
    dim = doc["dim"]
    doc["phi"]["M"] = np.eye(dim).tolist()
    doc["phi"]["b"] = [0.0] * dim
    sc = parse_scenario(doc)
    ms = multi_start_uniqueness(6, sc, radius=100.0, seed=11)
    # every start is already a fixed point of the identity, so the spread stays
    assert ms.all_converged
    assert ms.max_pairwise > 1.0
    assert not ms.passed


def test_multi_start_nonconverging_start_fails():
    sc = parse_scenario(oscillator_scenario_doc())
    ms = multi_start_uniqueness(3, sc, radius=10.0, seed=5)
    assert not ms.all_converged
    assert not ms.passed


def test_multi_start_two_identical_starts():
    sc = parse_scenario(affine_scenario_doc(0.5))
    a = multi_start_uniqueness(2, sc, radius=0.0, seed=1)
    assert a.max_pairwise == 0.0


def test_multi_start_requires_two():
    sc = parse_scenario(affine_scenario_doc(0.5))
    with pytest.raises(ValueError):
        multi_start_uniqueness(1, sc, radius=1.0, seed=0)


# ---------------------------------------------------------------------------
# singularity response


def closed_form_recovery(lam: float, eps: float, tol: float) -> int:
    """First step n has displacement (1-lam) * lam^(n-1) * eps; recovery is n - 1."""
    n = 1
    while (1 - lam) * lam ** (n - 1) * eps > tol:
        n += 1
    return n - 1


def test_recovery_iterations_matches_closed_form():
    sc, result = converged_affine(0.5)
    direction = np.zeros(sc.dim)
    direction[0] = 1.0
    got = recovery_iterations(sc, result.final, 1e-3, 1e-9, direction)
    assert got == closed_form_recovery(0.5, 1e-3, 1e-9)
    assert got in (19, 20)  # ~ ln(1e6)/ln 2 steps


def test_recovery_at_tolerance_scale_is_zero():
    sc, result = converged_affine(0.5)
    direction = np.zeros(sc.dim)
    direction[0] = 1.0
    assert recovery_iterations(sc, result.final, 1e-9, 1e-9, direction) == 0


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.9])
def test_singularity_fit_slope_matches_theory(lam):
    sc = parse_scenario(affine_scenario_doc(lam))
    fit = fit_singularity_response(sc, [1e-2, 1e-3, 1e-4], tol=1e-9)
    theory = 1.0 / math.log(1.0 / lam)
    assert abs(fit.slope - theory) <= 0.10 * theory
    assert fit.r_squared >= 0.9
    assert len(fit.points) == 3


def test_singularity_fit_matches_hand_least_squares():
    lam = 0.5
    sc = parse_scenario(affine_scenario_doc(lam))
    eps_list = [1e-2, 1e-3, 1e-4]
    fit = fit_singularity_response(sc, eps_list, tol=1e-9)
    # oracle: closed-form counts, then textbook least squares
    xs = np.array([math.log(e / 1e-9) for e in eps_list])
    ys = np.array([closed_form_recovery(lam, e, 1e-9) for e in eps_list], dtype=float)
    xbar, ybar = xs.mean(), ys.mean()
    slope = float(np.sum((xs - xbar) * (ys - ybar)) / np.sum((xs - xbar) ** 2))
    intercept = float(ybar - slope * xbar)
    assert [p[1] for p in fit.points] == [int(y) for y in ys]
    assert fit.slope == pytest.approx(slope, rel=1e-9)
    assert fit.intercept == pytest.approx(intercept, rel=1e-9)


def test_singularity_fit_validation():
    sc = parse_scenario(affine_scenario_doc(0.5))
    with pytest.raises(ValueError):
        fit_singularity_response(sc, [1e-2, 1e-3], tol=1e-9)
    with pytest.raises(ValueError):
        fit_singularity_response(sc, [1e-2, 1e-3, 1e-10], tol=1e-9)


def test_singularity_no_recovery_on_oscillator():
    sc = parse_scenario(oscillator_scenario_doc())
    with pytest.raises(NoRecovery):
        fit_singularity_response(sc, [1e-2, 1e-3, 1e-4], tol=1e-9)


# ---------------------------------------------------------------------------
# entropy


def test_entropy_uniform_vector_is_log_dim():
    for d in (2, 8, 32):
        s = SemanticState("u", np.full(d, 3.7))  # softmax of a constant is uniform
        assert state_entropy(s) == pytest.approx(math.log(d), rel=1e-12)


def test_entropy_decreases_with_dominance():
    prev = math.log(4)
    for scale in (1.0, 2.0, 4.0, 8.0):
        v = np.zeros(4)
        v[0] = scale
        h = state_entropy(SemanticState("s", v))
        assert h < prev
        prev = h


def test_entropy_series_converges_with_trace():
    sc, result = converged_affine(0.5)
    series = entropy_series(result.trace)
    final_h = state_entropy(result.final)
    assert series[-1] == pytest.approx(final_h, abs=1e-9)
    # trailing window sits at the fixed point
    assert all(abs(h - final_h) <= 1e-8 for h in series[-8:])


def test_entropy_summary_fraction():
    sc, result = converged_affine(0.5)
    summary = summarize_entropy(result.trace)
    assert 0.0 <= summary.fraction_nonincreasing <= 1.0
    assert summary.final_entropy == summary.series[-1]


def test_entropy_series_empty_trace_rejected():
    with pytest.raises(ValueError):
        entropy_series([])


# ---------------------------------------------------------------------------
# nash at fixed point


def test_nash_at_fixed_point_pd_is_exact_zero():
    sc = parse_scenario(pd_scenario_doc())
    result = run_scenario(sc, sample_lipschitz=False)
    assert result.converged
    eq = nash_at_fixed_point(sc, result.final)
    assert eq.converged
    assert eq.residual == 0.0


def test_nash_all_equal_game_zero():
    sc = parse_scenario(affine_scenario_doc(0.5))  # all-zero static game
    result = run_scenario(sc, sample_lipschitz=False)
    eq = nash_at_fixed_point(sc, result.final)
    assert eq.residual == 0.0


# ---------------------------------------------------------------------------
# run_verification


def cycling_scenario_doc() -> dict:
    g = biased_matching_pennies()
    return {
        "name": "cycling-subgame",
        "dim": 2,
        "initial": [1.0, 1.0],
        "phi": {"M": (0.5 * np.eye(2)).tolist(), "b": [0.0, 0.0], "beta": 0.0},
        "gamma": {
            "mode": "static",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [p.tolist() for p in g.payoffs],
            "outcomes": g.outcomes.tolist(),
            "damping": 1.0,  # pure best response: cycles, never meets tol
            "max_iters": 60,
        },
        "engine": {"max_iters": 50, "tol": 1e-9, "limit_block": 16, "seed": 0},
    }


def test_run_verification_full_pass_on_contraction():
    sc = parse_scenario(affine_scenario_doc(0.5))
    report = run_verification(sc)
    assert report.passed
    assert set(report.outcomes) == {"banach", "uniqueness", "limit_continuity", "singularity", "entropy", "nash_at_fixed_point"}
    assert report.outcomes["banach"].status == "pass"
    assert report.outcomes["uniqueness"].status == "pass"
    assert report.outcomes["limit_continuity"].status == "pass"
    assert report.outcomes["singularity"].status == "pass"
    assert report.outcomes["entropy"].status == "diagnostic"
    assert report.outcomes["nash_at_fixed_point"].status == "pass"
    assert report.lambda_estimate.lambda_hat == pytest.approx(0.5, rel=1e-3)


def test_run_verification_bound_override_fails_and_names_test():
    doc = affine_scenario_doc(0.5)
    doc["verify"] = {"bound_lambda": 0.25, "tests": ["banach"]}
    report = run_verification(parse_scenario(doc))
    assert not report.passed
    assert report.outcomes["banach"].status == "fail"
    assert "n=1" in report.outcomes["banach"].detail


def test_run_verification_empty_selection_all_skipped():
    doc = affine_scenario_doc(0.5)
    doc["verify"] = {"tests": []}
    report = run_verification(parse_scenario(doc))
    assert report.passed
    assert all(o.status == "skipped" for o in report.outcomes.values())


def test_run_verification_cycling_subgame_skips_nash():
    report = run_verification(parse_scenario(cycling_scenario_doc()))
    assert report.outcomes["nash_at_fixed_point"].status == "skipped"
    assert "non-convergence" in report.outcomes["nash_at_fixed_point"].detail


def test_run_verification_cosine_scenario_uses_true_metric_for_bounds():
    doc = affine_scenario_doc(0.5)
    doc["engine"]["metric"] = "cosine"
    doc["initial"] = [5.0] * 8
    report = run_verification(parse_scenario(doc))
    assert report.outcomes["banach"].metric == "euclidean"


def test_report_serialization(tmp_path):
    sc = parse_scenario(affine_scenario_doc(0.5))
    report = run_verification(sc)
    jpath, cpath = tmp_path / "report.json", tmp_path / "report.csv"
    report.write_json(jpath)
    report.write_csv(cpath)
    import json

    doc = json.loads(jpath.read_text())
    assert doc["passed"] is True
    assert set(doc["outcomes"]) == set(report.outcomes)
    lines = cpath.read_text().strip().splitlines()
    assert lines[0] == "name,pass,value,threshold"
    assert len(lines) == 1 + len(report.outcomes)


def test_verification_on_supplied_trace():
    sc = parse_scenario(affine_scenario_doc(0.5))
    result = run_scenario(sc, sample_lipschitz=False)
    report = run_verification(sc, trace=result.trace)
    assert report.outcomes["banach"].status == "pass"
    assert report.outcomes["limit_continuity"].status == "pass"


def test_verification_strips_scheduled_perturbations():
    # contraction diagnostics must measure the undisturbed dynamics even when
    # the scenario schedules a perturbation for its own trace
    doc = affine_scenario_doc(0.5)
    doc["engine"]["perturbations"] = [{"at_iter": 45, "delta": [1e-3] + [0.0] * 7}]
    doc["engine"]["max_iters"] = 200
    sc = parse_scenario(doc)
    report = run_verification(sc)
    assert report.outcomes["banach"].status == "pass"
    fit = report.singularity
    assert abs(fit.slope - 1.0 / math.log(2.0)) <= 0.10 / math.log(2.0)
    # a supplied trace that does contain the injection is not bound-checked
    perturbed = run_scenario(sc, sample_lipschitz=False)
    report2 = run_verification(sc, trace=perturbed.trace)
    assert report2.outcomes["banach"].status == "skipped"
    assert "perturbation" in report2.outcomes["banach"].detail
