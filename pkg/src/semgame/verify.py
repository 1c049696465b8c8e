"""Convergence verification over engine traces.

The suite covers: contraction-factor estimation and the geometric
(Banach-style) bound, multi-start uniqueness of the fixed point, the
limit-stage continuity check, divergence-response fitting (recovery
iterations against the log-magnitude of an injected perturbation),
a softmax-entropy diagnostic, and the Nash residual of the sub-game at the
fixed point.

Contraction bounds require a true metric, so when a scenario is configured
with the cosine distance these checks fall back to euclidean and the report
labels the metric actually used.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import TraceRecord, limit_stage
from .errors import InsufficientSignal, NoRecovery
from .metric import EUCLIDEAN, Metric, SemanticState, distance
from .scenario import Scenario, run_scenario, sample_ball
from .subgame import EquilibriumResult, derive_game, solve

LAMBDA_METHODS = ("consecutive_ratio", "to_fixed_point")


@dataclass(frozen=True)
class LambdaEstimate:
    """Empirical contraction factor from a trace.

    lambda_hat is the max admissible ratio (worst case, sound for bound
    checking); the geometric mean is reported alongside as the typical rate.
    """

    lambda_hat: float
    method: str
    samples: int
    max_ratio: float
    geometric_mean: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _distances_to(trace: list[TraceRecord], metric: Metric, target: SemanticState) -> list[float]:
    return [distance(metric, rec.state, target) for rec in trace]


def estimate_lambda(
    trace: list[TraceRecord],
    metric: Metric,
    E_star: SemanticState,
    tol: float = 1e-9,
    method: str = "to_fixed_point",
) -> LambdaEstimate:
    """Estimate the per-step contraction factor from a logged run.

    Ratios whose denominator is within 10*tol of zero are excluded: that
    close to the fixed point the quotient is float noise.  Raises
    InsufficientSignal when fewer than three records carry usable signal.
    """
    if method not in LAMBDA_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {LAMBDA_METHODS}")
    floor = 10.0 * tol
    if method == "to_fixed_point":
        series = _distances_to(trace, metric, E_star)
    else:
        series = [rec.d_step for rec in trace if rec.d_step is not None]
    admissible = [x for x in series if x > floor]
    if len(admissible) < 3:
        raise InsufficientSignal(
            f"only {len(admissible)} records above {floor:.3g}; need >= 3 for a ratio estimate"
        )
    ratios = []
    for i in range(len(series) - 1):
        if series[i] > floor:
            ratios.append(series[i + 1] / series[i])
    if not ratios:
        raise InsufficientSignal("no admissible consecutive pairs")
    max_ratio = float(max(ratios))
    positive = [r for r in ratios if r > 0.0]
    geo = float(np.exp(np.mean(np.log(positive)))) if positive else 0.0
    return LambdaEstimate(
        lambda_hat=max_ratio,
        method=method,
        samples=len(ratios),
        max_ratio=max_ratio,
        geometric_mean=geo,
    )


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    first_violation: int | None
    checked: int


def check_geometric_bound(
    trace: list[TraceRecord],
    metric: Metric,
    E_star: SemanticState,
    lam: float,
) -> BoundCheck:
    """Verify d(E_n, E*) <= lam^n * d(E_0, E*) * (1 + 1e-6) for every record."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must be in (0, 1), got {lam}")
    if not trace:
        return BoundCheck(True, None, 0)
    d0 = distance(metric, trace[0].state, E_star)
    slack = 1.0 + 1e-6
    for rec in trace:
        bound = (lam ** rec.n) * d0 * slack
        if distance(metric, rec.state, E_star) > bound:
            return BoundCheck(False, rec.n, len(trace))
    return BoundCheck(True, None, len(trace))


@dataclass(frozen=True)
class StartOutcome:
    index: int
    converged: bool
    final: SemanticState


@dataclass(frozen=True)
class MultiStartResult:
    max_pairwise: float
    threshold: float
    starts: tuple[StartOutcome, ...]
    all_converged: bool

    @property
    def passed(self) -> bool:
        return self.all_converged and self.max_pairwise <= self.threshold


def _unperturbed(scenario: Scenario) -> Scenario:
    """Copy of the scenario without its scheduled perturbations.

    Contraction diagnostics measure the undisturbed dynamics; injected
    divergences are probed separately by the singularity fit.
    """
    if not scenario.engine.perturbations:
        return scenario
    return dataclasses.replace(
        scenario, engine=dataclasses.replace(scenario.engine, perturbations=())
    )


def multi_start_uniqueness(
    starts: int,
    scenario: Scenario,
    radius: float,
    seed: int,
    metric: Metric | None = None,
) -> MultiStartResult:
    """Run from several random initial states and measure final-state spread.

    Start i draws its initial state from the ball with seed ``seed + i``.
    Any non-converged start marks the test failed; the spread is still
    reported over the converged finals.
    """
    if starts < 2:
        raise ValueError(f"need at least 2 starts, got {starts}")
    metric = metric or scenario.engine.metric
    scenario = _unperturbed(scenario)
    outcomes = []
    for i in range(starts):
        rng = np.random.default_rng(seed + i)
        E0 = SemanticState(f"start{i}", sample_ball(rng, scenario.dim, radius))
        result = run_scenario(scenario, initial=E0, sample_lipschitz=False)
        outcomes.append(StartOutcome(i, result.converged, result.final))
    finals = [o.final for o in outcomes if o.converged]
    worst = 0.0
    for i in range(len(finals)):
        for j in range(i + 1, len(finals)):
            worst = max(worst, distance(metric, finals[i], finals[j]))
    return MultiStartResult(
        max_pairwise=worst,
        threshold=10.0 * scenario.engine.tol,
        starts=tuple(outcomes),
        all_converged=all(o.converged for o in outcomes),
    )


@dataclass(frozen=True)
class SingularityFit:
    """Least-squares fit of recovery iterations against log perturbation scale.

    Points are (ln(magnitude / tol), recovery_iters); for a pure contraction
    with factor lam the theoretical slope is 1 / ln(1 / lam).
    """

    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, int], ...]

    def to_json(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "points": [list(p) for p in self.points],
        }


def _least_squares(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def recovery_iterations(
    scenario: Scenario,
    E_star: SemanticState,
    magnitude: float,
    tol: float,
    direction: np.ndarray,
) -> int:
    """Iterations a run needs to re-converge after displacing E* by magnitude.

    Counted as the number of steps strictly before the first step whose
    displacement is within tol, so a perturbation at the tolerance scale
    recovers in zero iterations.
    """
    start = E_star.with_vec(E_star.vec + magnitude * direction, id="perturbed")
    result = run_scenario(scenario, initial=start, sample_lipschitz=False)
    if result.converged_at is None:
        raise NoRecovery(
            f"perturbation of magnitude {magnitude:.3g} did not re-converge "
            f"within {scenario.engine.max_iters} iterations"
        )
    return result.converged_at - 1


def fit_singularity_response(
    scenario: Scenario,
    eps_list: list[float],
    tol: float,
) -> SingularityFit:
    """Converge, inject perturbations of several magnitudes, fit the response.

    Each magnitude in eps_list perturbs the converged state along a fixed
    seeded unit direction; recovery iterations are regressed on
    ln(magnitude / tol).
    """
    if len(eps_list) < 3:
        raise ValueError(f"need >= 3 perturbation magnitudes, got {len(eps_list)}")
    if any(e <= tol for e in eps_list):
        raise ValueError("every magnitude must exceed tol")
    scenario = _unperturbed(scenario)
    base = run_scenario(scenario, sample_lipschitz=False)
    if not base.converged:
        raise NoRecovery("base run did not converge; cannot probe recovery")
    E_star = base.final
    rng = np.random.default_rng(scenario.engine.seed)
    direction = rng.standard_normal(scenario.dim)
    direction /= float(np.linalg.norm(direction))
    points = []
    for eps in eps_list:
        iters = recovery_iterations(scenario, E_star, eps, tol, direction)
        points.append((math.log(eps / tol), iters))
    xs = np.array([p[0] for p in points])
    ys = np.array([float(p[1]) for p in points], dtype=np.float64)
    slope, intercept, r2 = _least_squares(xs, ys)
    return SingularityFit(slope, intercept, r2, tuple(points))


def state_entropy(state: SemanticState) -> float:
    """Shannon entropy (nats) of the softmax-normalized state vector."""
    v = state.vec - state.vec.max()
    p = np.exp(v)
    p /= p.sum()
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def entropy_series(trace: list[TraceRecord]) -> list[float]:
    """Per-record softmax entropy; a diagnostic, not an acceptance gate."""
    if not trace:
        raise ValueError("trace is empty")
    return [state_entropy(rec.state) for rec in trace]


@dataclass(frozen=True)
class EntropySummary:
    series: tuple[float, ...]
    fraction_nonincreasing: float
    final_entropy: float


def summarize_entropy(trace: list[TraceRecord]) -> EntropySummary:
    series = entropy_series(trace)
    if len(series) < 2:
        frac = 1.0
    else:
        drops = sum(1 for a, b in zip(series, series[1:]) if b <= a + 1e-15)
        frac = drops / (len(series) - 1)
    return EntropySummary(tuple(series), frac, series[-1])


def nash_at_fixed_point(scenario: Scenario, E_star: SemanticState) -> EquilibriumResult:
    """Solve the sub-game the converged state induces; residual 0 at equilibrium."""
    game = derive_game(E_star, scenario.gamma)
    return solve(
        game,
        scenario.gamma.tol,
        scenario.gamma.max_iters,
        scenario.gamma.damping,
        scenario.engine.seed,
    )


@dataclass(frozen=True)
class TestOutcome:
    name: str
    status: str  # pass | fail | skipped | diagnostic
    value: float | None = None
    threshold: float | None = None
    metric: str | None = None
    detail: str = ""

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class VerificationReport:
    scenario: str
    outcomes: dict[str, TestOutcome] = field(default_factory=dict)
    lambda_estimate: LambdaEstimate | None = None
    singularity: SingularityFit | None = None
    entropy: EntropySummary | None = None

    @property
    def passed(self) -> bool:
        return all(o.status != "fail" for o in self.outcomes.values())

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "passed": self.passed,
            "outcomes": {k: o.to_json() for k, o in self.outcomes.items()},
            "lambda_estimate": None if self.lambda_estimate is None else self.lambda_estimate.to_json(),
            "singularity": None if self.singularity is None else self.singularity.to_json(),
            "entropy": None
            if self.entropy is None
            else {
                "series": list(self.entropy.series),
                "fraction_nonincreasing": self.entropy.fraction_nonincreasing,
                "final_entropy": self.entropy.final_entropy,
            },
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "pass", "value", "threshold"])
            for name, o in self.outcomes.items():
                status = {"pass": "true", "fail": "false"}.get(o.status, o.status)
                writer.writerow(
                    [name, status, "" if o.value is None else o.value,
                     "" if o.threshold is None else o.threshold]
                )


def _skip(name: str, reason: str) -> TestOutcome:
    return TestOutcome(name=name, status="skipped", detail=reason)


def run_verification(
    scenario: Scenario,
    trace: list[TraceRecord] | None = None,
) -> VerificationReport:
    """Execute every enabled test; sections never go missing, only skipped.

    A supplied trace is analyzed as-is; otherwise a fresh run is made.
    Contraction-dependent sections substitute euclidean for the cosine
    distance and record which metric they used.
    """
    cfg = scenario.engine
    vc = scenario.verify
    bound_metric = cfg.metric if cfg.metric.is_true_metric else EUCLIDEAN
    report = VerificationReport(scenario=scenario.name)

    fresh = None
    if trace is None:
        # contraction diagnostics measure the undisturbed dynamics
        fresh = run_scenario(_unperturbed(scenario), sample_lipschitz=False)
        trace = fresh.trace
    converged = fresh.converged if fresh is not None else (
        bool(trace) and trace[-1].d_step is not None and trace[-1].d_step <= cfg.tol
    )
    E_star = trace[-1].state if trace else None
    has_injected = any(
        rec.milestone == "delta" and rec.conflict and "perturbation" in rec.conflict
        for rec in trace
    )

    if "banach" not in vc.tests:
        report.outcomes["banach"] = _skip("banach", "disabled in scenario")
    elif not converged:
        report.outcomes["banach"] = _skip("banach", "run did not converge")
    elif has_injected:
        report.outcomes["banach"] = _skip(
            "banach", "trace contains injected perturbations; geometric bound not applicable"
        )
    else:
        try:
            est = estimate_lambda(trace, bound_metric, E_star, cfg.tol, vc.lambda_method)
            report.lambda_estimate = est
            lam = vc.bound_lambda if vc.bound_lambda is not None else est.lambda_hat * 1.001
            if not 0.0 < lam < 1.0:
                report.outcomes["banach"] = TestOutcome(
                    "banach",
                    "fail",
                    value=est.lambda_hat,
                    threshold=1.0,
                    metric=bound_metric.kind,
                    detail=f"estimated factor {est.lambda_hat:.6g} is not a contraction",
                )
            else:
                chk = check_geometric_bound(trace, bound_metric, E_star, lam)
                report.outcomes["banach"] = TestOutcome(
                    "banach",
                    "pass" if chk.passed else "fail",
                    value=est.lambda_hat,
                    threshold=lam,
                    metric=bound_metric.kind,
                    detail=(
                        f"geometric bound at {lam:.6g} over {chk.checked} records"
                        if chk.passed
                        else f"bound violated first at n={chk.first_violation}"
                    ),
                )
        except InsufficientSignal as exc:
            report.outcomes["banach"] = _skip("banach", str(exc))

    if "uniqueness" not in vc.tests:
        report.outcomes["uniqueness"] = _skip("uniqueness", "disabled in scenario")
    else:
        ms = multi_start_uniqueness(vc.starts, scenario, vc.radius, cfg.seed, bound_metric)
        detail = f"{vc.starts} starts in radius {vc.radius}"
        if not ms.all_converged:
            bad = [o.index for o in ms.starts if not o.converged]
            detail += f"; non-converged starts: {bad}"
        report.outcomes["uniqueness"] = TestOutcome(
            "uniqueness",
            "pass" if ms.passed else "fail",
            value=ms.max_pairwise,
            threshold=ms.threshold,
            metric=bound_metric.kind,
            detail=detail,
        )

    if "limit_continuity" not in vc.tests:
        report.outcomes["limit_continuity"] = _skip("limit_continuity", "disabled in scenario")
    elif len(trace) < cfg.limit_block:
        report.outcomes["limit_continuity"] = _skip(
            "limit_continuity", f"trace has {len(trace)} records, window needs {cfg.limit_block}"
        )
    else:
        threshold = 10.0 * cfg.tol
        limit = limit_stage(trace, cfg.limit_block, threshold, bound_metric)
        if limit is None:
            report.outcomes["limit_continuity"] = TestOutcome(
                "limit_continuity",
                "fail",
                value=None,
                threshold=threshold,
                metric=bound_metric.kind,
                detail="no limit: trailing window diameter exceeds tolerance",
            )
        else:
            gap = distance(bound_metric, limit, trace[-1].state)
            report.outcomes["limit_continuity"] = TestOutcome(
                "limit_continuity",
                "pass" if gap <= threshold else "fail",
                value=gap,
                threshold=threshold,
                metric=bound_metric.kind,
                detail=f"window mean vs final state over last {cfg.limit_block} records",
            )

    if "singularity" not in vc.tests:
        report.outcomes["singularity"] = _skip("singularity", "disabled in scenario")
    else:
        try:
            fit = fit_singularity_response(scenario, list(vc.eps_list), cfg.tol)
            report.singularity = fit
            report.outcomes["singularity"] = TestOutcome(
                "singularity",
                "pass" if fit.r_squared >= vc.r2_min else "fail",
                value=fit.slope,
                threshold=vc.r2_min,
                metric=cfg.metric.kind,
                detail=f"r_squared {fit.r_squared:.4f} over {len(fit.points)} magnitudes",
            )
        except NoRecovery as exc:
            report.outcomes["singularity"] = _skip("singularity", str(exc))

    if "entropy" not in vc.tests:
        report.outcomes["entropy"] = _skip("entropy", "disabled in scenario")
    elif not trace:
        report.outcomes["entropy"] = _skip("entropy", "empty trace")
    else:
        summary = summarize_entropy(trace)
        report.entropy = summary
        report.outcomes["entropy"] = TestOutcome(
            "entropy",
            "diagnostic",
            value=summary.fraction_nonincreasing,
            threshold=None,
            detail=f"final entropy {summary.final_entropy:.6g} nats; diagnostic only",
        )

    if "nash_at_fixed_point" not in vc.tests:
        report.outcomes["nash_at_fixed_point"] = _skip("nash_at_fixed_point", "disabled in scenario")
    elif E_star is None or not converged:
        reason = "run did not converge"
        if trace and trace[-1].milestone == "delta" and trace[-1].conflict:
            reason += f" ({trace[-1].conflict})"
        report.outcomes["nash_at_fixed_point"] = _skip("nash_at_fixed_point", reason)
    else:
        eq = nash_at_fixed_point(scenario, E_star)
        if not eq.converged:
            report.outcomes["nash_at_fixed_point"] = _skip(
                "nash_at_fixed_point",
                f"sub-game solver did not converge (best residual {eq.residual:.3g})"
            )
        else:
            report.outcomes["nash_at_fixed_point"] = TestOutcome(
                "nash_at_fixed_point",
                "pass" if eq.residual <= cfg.tol else "fail",
                value=eq.residual,
                threshold=cfg.tol,
                detail="sub-game residual at the converged state",
            )

    return report
