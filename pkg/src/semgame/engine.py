"""The outer iteration: a damped affine update blended with game resolutions.

One step maps a state E to

    next = (1 - beta) * (M @ E + b) + beta * resolution(E)

where ``resolution(E)`` is the expected outcome vector of the sub-game the
state induces.  A run iterates this map, logging one trace record per
iteration, classifying each as

* ``chi``   -- step displacement and sub-game residual both within tolerance
               (a stability milestone),
* ``delta`` -- an injected perturbation or a non-convergent sub-game solve
               (a divergence event),
* ``none``  -- an ordinary step.

Runs stop after the step displacement first falls within tolerance with no
perturbations still pending, plus ``limit_block`` extra iterations so the
trailing window is meaningful for limit-stage checks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InsufficientTrace, SpecMismatch
from .metric import EUCLIDEAN, Metric, SemanticState, distance
from .subgame import EquilibriumResult, GammaSpec, derive_game, solve

MILESTONES = ("none", "chi", "delta")


def spectral_norm(M: np.ndarray, iters: int = 200) -> float:
    """Largest singular value of M, estimated by power iteration on M^T M."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    MtM = M.T @ M
    est = 0.0
    for _ in range(iters):
        w = MtM @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        est = norm
    return float(np.sqrt(est))


@dataclass(frozen=True)
class PhiSpec:
    """The affine part of the update plus the mixing weight of the resolution."""

    M: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    beta: float = 0.0

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"M must be square, got shape {M.shape}")
        if b.shape != (M.shape[0],):
            raise DimensionMismatch(f"b has shape {b.shape}, expected ({M.shape[0]},)")
        if not np.all(np.isfinite(M)) or not np.all(np.isfinite(b)):
            raise ValueError("M and b must be finite")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        M.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def lambda_phi(self) -> float:
        """Power-iteration estimate of the affine part's contraction factor."""
        return spectral_norm(self.M)

    def apply(self, vec: np.ndarray, resolution: np.ndarray) -> np.ndarray:
        return (1.0 - self.beta) * (self.M @ vec + self.b) + self.beta * resolution


@dataclass(frozen=True)
class Perturbation:
    """An additive displacement injected at a scheduled iteration."""

    at_iter: int
    delta: np.ndarray = field(repr=False)
    id: str = ""

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)
        if self.at_iter < 1:
            raise ValueError(f"at_iter must be >= 1, got {self.at_iter}")


@dataclass(frozen=True)
class EngineConfig:
    max_iters: int = 200
    tol: float = 1e-9
    metric: Metric = EUCLIDEAN
    limit_block: int = 16
    nesting_depth: int = 0
    identity_mode: bool = False
    perturbations: tuple[Perturbation, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.limit_block < 2:
            raise ValueError(f"limit_block must be >= 2, got {self.limit_block}")
        if self.nesting_depth not in (0, 1):
            raise ValueError(f"nesting_depth must be 0 or 1, got {self.nesting_depth}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        object.__setattr__(self, "perturbations", tuple(self.perturbations))


@dataclass(frozen=True)
class TraceRecord:
    """One logged iteration; the n=0 record seeds the trace with E0."""

    n: int
    state: SemanticState
    d_step: float | None
    milestone: str = "none"
    context: str = ""
    proof: dict | None = None
    conflict: str | None = None
    resolution: np.ndarray | None = field(default=None, repr=False)
    subgame: EquilibriumResult | None = None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "state": self.state.to_json(),
            "d_step": self.d_step,
            "milestone": self.milestone,
            "context": self.context,
            "proof": self.proof,
            "conflict": self.conflict,
            "resolution": None if self.resolution is None else self.resolution.tolist(),
            "subgame": None if self.subgame is None else self.subgame.to_json(),
        }

    @staticmethod
    def from_json(doc: dict) -> "TraceRecord":
        return TraceRecord(
            n=doc["n"],
            state=SemanticState.from_json(doc["state"]),
            d_step=doc["d_step"],
            milestone=doc["milestone"],
            context=doc["context"],
            proof=doc["proof"],
            conflict=doc["conflict"],
            resolution=None
            if doc["resolution"] is None
            else np.asarray(doc["resolution"], dtype=np.float64),
            subgame=None if doc["subgame"] is None else EquilibriumResult.from_json(doc["subgame"]),
        )


def dump_trace(trace: list[TraceRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_trace(path) -> list[TraceRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TraceRecord.from_json(json.loads(line)))
    return records


@dataclass
class RunResult:
    final: SemanticState
    trace: list[TraceRecord]
    converged: bool
    converged_at: int | None = None
    lipschitz: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        # allow `final, trace, converged = run(...)`
        return iter((self.final, self.trace, self.converged))


def _check_shapes(state: SemanticState, phi: PhiSpec, gamma: GammaSpec) -> None:
    if phi.dim != state.dim:
        raise DimensionMismatch(f"phi expects dim {phi.dim}, state has dim {state.dim}")
    if gamma.dim != state.dim:
        raise DimensionMismatch(f"gamma outcomes have dim {gamma.dim}, state has dim {state.dim}")


def _resolve(state: SemanticState, phi: PhiSpec, gamma: GammaSpec, cfg: EngineConfig):
    """Sub-game resolution for one step.

    Returns (resolution vector, logged EquilibriumResult, solved ok, context tag).
    With nesting enabled the resolution is the fixed point of a depth-0 inner
    run seeded from the current state ("stabilise then propagate").
    """
    if cfg.nesting_depth == 1:
        inner_cfg = dataclasses.replace(cfg, nesting_depth=0, perturbations=())
        inner = run(state, phi, gamma, inner_cfg, sample_lipschitz=False)
        sub = inner.trace[-1].subgame
        return inner.final.vec, sub, inner.converged, f"subgame={gamma.name},nested"
    sub = solve(derive_game(state, gamma), gamma.tol, gamma.max_iters, gamma.damping, cfg.seed)
    return sub.resolution, sub, sub.converged, f"subgame={gamma.name}"


def step(
    state: SemanticState,
    phi: PhiSpec,
    gamma: GammaSpec,
    cfg: EngineConfig,
    n: int = 1,
) -> tuple[SemanticState, TraceRecord]:
    """Advance one iteration and build its trace record."""
    _check_shapes(state, phi, gamma)
    res_vec, sub, sub_ok, tag = _resolve(state, phi, gamma, cfg)
    nxt = state.with_vec(phi.apply(state.vec, res_vec))
    d = distance(cfg.metric, state, nxt)
    milestone, proof, conflict, resolution = "none", None, None, None
    if not sub_ok:
        milestone = "delta"
        conflict = f"subgame non-convergence (residual {sub.residual:.3g})"
        resolution = res_vec
    elif d <= cfg.tol and sub.residual <= cfg.tol:
        milestone = "chi"
        proof = {"d_step": d, "residual": sub.residual}
    rec = TraceRecord(
        n=n,
        state=nxt,
        d_step=d,
        milestone=milestone,
        context=tag,
        proof=proof,
        conflict=conflict,
        resolution=resolution,
        subgame=sub,
    )
    return nxt, rec


def estimate_lipschitz(
    phi: PhiSpec,
    gamma: GammaSpec,
    cfg: EngineConfig,
    samples: int = 200,
) -> float:
    """Sampled Lipschitz constant of the one-step map (max ratio over pairs).

    Pairs are standard-normal states drawn from cfg.seed, so the estimate is
    reproducible.  A value >= 1 does not stop a run; it only produces a
    warning, since the verification suite is meant to detect, not presuppose,
    contraction.
    """
    rng = np.random.default_rng(cfg.seed)
    dim = phi.dim

    def one_step(vec: np.ndarray) -> np.ndarray:
        s = SemanticState("probe", vec)
        res_vec, _, _, _ = _resolve(s, phi, gamma, cfg)
        return phi.apply(vec, res_vec)

    worst = 0.0
    for _ in range(samples):
        x = rng.standard_normal(dim)
        y = rng.standard_normal(dim)
        dxy = distance(cfg.metric, SemanticState("x", x), SemanticState("y", y))
        if dxy < 1e-12:
            continue
        fx, fy = one_step(x), one_step(y)
        dff = distance(cfg.metric, SemanticState("fx", fx), SemanticState("fy", fy))
        worst = max(worst, dff / dxy)
    return worst


def run(
    E0: SemanticState,
    phi: PhiSpec,
    gamma: GammaSpec,
    cfg: EngineConfig,
    sample_lipschitz: bool = True,
) -> RunResult:
    """Iterate the composite update from E0, logging a full trace.

    Convergence is declared at the first iteration whose step displacement is
    within cfg.tol while no perturbation remains scheduled; the run then
    takes cfg.limit_block further iterations (so the trailing window of the
    trace sits at the fixed point) and stops.  Scheduled perturbations add
    their delta to the state before the step at their iteration and are
    logged as delta records.  Non-convergence is not an error: the result
    carries converged=False.

    With identity_mode the resolution fed to the update is the running mean
    of all resolutions so far, so the fixed point aggregates the whole
    history of sub-game outcomes rather than only the latest one.
    """
    _check_shapes(E0, phi, gamma)
    for p in cfg.perturbations:
        if p.delta.shape != (E0.dim,):
            raise DimensionMismatch(
                f"perturbation {p.id!r} delta has shape {p.delta.shape}, expected ({E0.dim},)"
            )
    warnings: list[str] = []
    lip = None
    if sample_lipschitz:
        lip = estimate_lipschitz(phi, gamma, cfg)
        if lip >= 1.0:
            warnings.append(
                f"sampled Lipschitz estimate {lip:.6g} >= 1; iteration may not contract"
            )

    by_iter: dict[int, Perturbation] = {}
    for i, p in enumerate(cfg.perturbations):
        pid = p.id or f"p{i}"
        if p.at_iter in by_iter:
            raise ValueError(f"two perturbations scheduled at iteration {p.at_iter}")
        if p.at_iter > cfg.max_iters:
            raise ValueError(
                f"perturbation {pid!r} scheduled at {p.at_iter}, beyond max_iters "
                f"{cfg.max_iters}; it would block convergence forever"
            )
        by_iter[p.at_iter] = Perturbation(p.at_iter, p.delta, pid)

    state = E0
    trace = [TraceRecord(n=0, state=E0, d_step=None)]
    resolutions: list[np.ndarray] = []
    converged_at: int | None = None

    n = 0
    while n < cfg.max_iters:
        n += 1
        pert = by_iter.get(n)
        base = state
        conflict = None
        milestone = "none"
        context_extra = ""
        if pert is not None:
            base = state.with_vec(state.vec + pert.delta)
            milestone = "delta"
            mag = float(np.linalg.norm(pert.delta))
            conflict = f"perturbation {pert.id} (magnitude {mag:.6g})"
            context_extra = f",perturbation={pert.id}"

        res_vec, sub, sub_ok, tag = _resolve(base, phi, gamma, cfg)
        if cfg.identity_mode:
            resolutions.append(res_vec)
            res_used = np.mean(resolutions, axis=0)
        else:
            res_used = res_vec
        next_vec = phi.apply(base.vec, res_used)
        if not np.all(np.isfinite(next_vec)):
            # expanding maps can overflow; non-convergence is never fatal
            warnings.append(f"iteration diverged to non-finite values at n={n}")
            break
        nxt = base.with_vec(next_vec)
        d = distance(cfg.metric, base, nxt)

        proof = None
        resolution = None
        if not sub_ok:
            milestone = "delta"
            if conflict is None:
                conflict = f"subgame non-convergence (residual {sub.residual:.3g})"
            resolution = res_used
        elif milestone == "delta":
            resolution = pert.delta
        elif d <= cfg.tol and sub.residual <= cfg.tol:
            milestone = "chi"
            proof = {"d_step": d, "residual": sub.residual}

        trace.append(
            TraceRecord(
                n=n,
                state=nxt,
                d_step=d,
                milestone=milestone,
                context=tag + context_extra,
                proof=proof,
                conflict=conflict,
                resolution=resolution,
                subgame=sub,
            )
        )
        state = nxt

        pending = any(at > n for at in by_iter)
        if converged_at is None and milestone != "delta" and d <= cfg.tol and not pending:
            converged_at = n
        if converged_at is not None and n >= converged_at + cfg.limit_block:
            break

    return RunResult(
        final=state,
        trace=trace,
        converged=converged_at is not None,
        converged_at=converged_at,
        lipschitz=lip,
        warnings=warnings,
    )


def limit_stage(
    trace: list[TraceRecord],
    block: int,
    tol: float,
    metric: Metric = EUCLIDEAN,
) -> SemanticState | None:
    """Mean of the last `block` states if their pairwise diameter is within tol.

    Returns None ("no limit") when the window has not settled -- e.g. for an
    oscillating, non-contractive run.  This is the finite stand-in for a
    limit-stage state.
    """
    if len(trace) < block:
        raise InsufficientTrace(f"trace has {len(trace)} records, window needs {block}")
    states = [rec.state for rec in trace[-block:]]
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            if distance(metric, states[i], states[j]) > tol:
                return None
    mean_vec = np.mean([s.vec for s in states], axis=0)
    return SemanticState("limit", mean_vec)


def first_divergence(
    trace: list[TraceRecord],
    phi: PhiSpec,
    gamma: GammaSpec,
    cfg: EngineConfig,
) -> int | None:
    """Re-run from the trace's seed state and find the first non-identical record.

    Returns the iteration index of the first mismatch, or None when the
    re-execution reproduces every logged state bit-exactly.  An empty trace
    matches vacuously.
    """
    if not trace:
        return None
    seed_rec = trace[0]
    if seed_rec.n != 0:
        raise SpecMismatch(f"trace must start with an n=0 seed record, got n={seed_rec.n}")
    if seed_rec.state.dim != phi.dim:
        raise SpecMismatch(
            f"trace state dim {seed_rec.state.dim} does not match phi dim {phi.dim}"
        )
    result = run(seed_rec.state, phi, gamma, cfg, sample_lipschitz=False)
    fresh = result.trace
    for old, new in zip(trace, fresh):
        if old.n != new.n or not np.array_equal(old.state.vec, new.state.vec):
            return old.n
        old_d = -1.0 if old.d_step is None else old.d_step
        new_d = -1.0 if new.d_step is None else new.d_step
        if old_d != new_d or old.milestone != new.milestone:
            return old.n
    if len(trace) != len(fresh):
        return min(len(trace), len(fresh))
    return None


def replay(
    trace: list[TraceRecord],
    phi: PhiSpec,
    gamma: GammaSpec,
    cfg: EngineConfig,
) -> bool:
    """True iff re-executing the run reproduces the trace bit-exactly."""
    return first_divergence(trace, phi, gamma, cfg) is None
