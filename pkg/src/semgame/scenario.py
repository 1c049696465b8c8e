"""Scenario files: one JSON document describing a full run.

A scenario fixes the update map, the embedded game, the engine settings,
the initial state (explicit vector or a seeded random draw from a ball) and
the verification configuration.  Loading validates all cross-field
dimensions and reports the exact offending field path (e.g. ``phi.M``) so
CLI failures are actionable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import EngineConfig, Perturbation, PhiSpec, RunResult, run
from .errors import ScenarioError
from .metric import Metric, SemanticState
from .subgame import GammaSpec, SubGame

DEFAULT_TESTS = (
    "banach",
    "uniqueness",
    "limit_continuity",
    "singularity",
    "entropy",
    "nash_at_fixed_point",
)

_TEST_ALIASES = {"limit": "limit_continuity", "nash": "nash_at_fixed_point"}

_METRIC_ALIASES = {
    "euclidean": "euclidean",
    "cosine": "cosine",
    "cosine_distance": "cosine",
    "angular": "angular",
}


@dataclass(frozen=True)
class VerifyConfig:
    """Which verification tests run and with what knobs."""

    tests: tuple[str, ...] = DEFAULT_TESTS
    starts: int = 10
    radius: float = 100.0
    eps_list: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    bound_lambda: float | None = None
    lambda_method: str = "to_fixed_point"
    r2_min: float = 0.9


@dataclass(frozen=True)
class Scenario:
    name: str
    dim: int
    phi: PhiSpec
    gamma: GammaSpec
    engine: EngineConfig
    initial: dict = field(default_factory=dict)
    category: dict | None = None
    verify: VerifyConfig = VerifyConfig()

    def initial_state(self, seed: int | None = None) -> SemanticState:
        """Resolve the configured initial state; seeded draw for random mode."""
        if self.initial.get("mode") == "random_ball":
            rng = np.random.default_rng(self.engine.seed if seed is None else seed)
            vec = sample_ball(rng, self.dim, self.initial["radius"])
            return SemanticState("E0", vec)
        return SemanticState("E0", np.asarray(self.initial["vec"], dtype=np.float64))


def sample_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform draw from the closed ball of the given radius."""
    direction = rng.standard_normal(dim)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return np.zeros(dim)
    r = radius * rng.uniform() ** (1.0 / dim)
    return direction / norm * r


def run_scenario(
    sc: Scenario,
    initial: SemanticState | None = None,
    seed: int | None = None,
    sample_lipschitz: bool = True,
) -> RunResult:
    """Run the engine as the scenario describes, with optional overrides."""
    cfg = sc.engine if seed is None else dataclasses.replace(sc.engine, seed=seed)
    E0 = sc.initial_state(seed) if initial is None else initial
    return run(E0, sc.phi, sc.gamma, cfg, sample_lipschitz=sample_lipschitz)


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _number(doc: dict, key: str, path: str, default=None):
    if key not in doc:
        if default is not None:
            return default
        raise ScenarioError(f"{path}.{key}", "missing required field")
    v = doc[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
    return v


def _array(value, shape: tuple[int, ...], path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(path, f"not a numeric array: {exc}") from exc
    if arr.shape != shape:
        raise ScenarioError(path, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(path, "contains non-finite entries")
    return arr


def _parse_phi(doc: dict, dim: int) -> PhiSpec:
    M = _array(_require(doc, "M", "phi"), (dim, dim), "phi.M")
    b = _array(doc.get("b", np.zeros(dim)), (dim,), "phi.b")
    beta = _number(doc, "beta", "phi", default=0.0)
    if not 0.0 <= beta < 1.0:
        raise ScenarioError("phi.beta", f"must be in [0, 1), got {beta}")
    return PhiSpec(M=M, b=b, beta=beta)


def _parse_gamma(doc: dict, dim: int) -> GammaSpec:
    mode = _require(doc, "mode", "gamma")
    if mode not in ("static", "state_derived"):
        raise ScenarioError("gamma.mode", f"must be 'static' or 'state_derived', got {mode!r}")
    players = _require(doc, "players", "gamma")
    actions = tuple(_require(doc, "actions", "gamma"))
    if len(actions) != players:
        raise ScenarioError("gamma.actions", f"expected {players} counts, got {len(actions)}")
    damping = _number(doc, "damping", "gamma", default=0.5)
    tol = _number(doc, "tol", "gamma", default=1e-9)
    max_iters = int(_number(doc, "max_iters", "gamma", default=1000))
    name = doc.get("name", "gamma")
    outcomes = _array(_require(doc, "outcomes", "gamma"), actions + (dim,), "gamma.outcomes")
    try:
        if mode == "static":
            payoffs = _require(doc, "payoffs", "gamma")
            if len(payoffs) != players:
                raise ScenarioError("gamma.payoffs", f"expected {players} tensors, got {len(payoffs)}")
            tensors = tuple(
                _array(p, actions, f"gamma.payoffs[{i}]") for i, p in enumerate(payoffs)
            )
            game = SubGame(players, actions, tensors, outcomes)
            return GammaSpec(
                mode="static", game=game, damping=damping, tol=tol, max_iters=max_iters, name=name
            )
        maps = _require(doc, "payoff_maps", "gamma")
        if len(maps) != players:
            raise ScenarioError("gamma.payoff_maps", f"expected {players} maps, got {len(maps)}")
        tensors = tuple(
            _array(w, actions + (dim,), f"gamma.payoff_maps[{i}]") for i, w in enumerate(maps)
        )
        return GammaSpec(
            mode="state_derived",
            payoff_maps=tensors,
            actions=actions,
            outcomes=outcomes,
            damping=damping,
            tol=tol,
            max_iters=max_iters,
            name=name,
        )
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError("gamma", str(exc)) from exc


def _parse_engine(doc: dict, dim: int) -> EngineConfig:
    metric_name = doc.get("metric", "euclidean")
    if metric_name not in _METRIC_ALIASES:
        raise ScenarioError(
            "engine.metric", f"unknown metric {metric_name!r}; expected euclidean/cosine/angular"
        )
    perts = []
    for i, p in enumerate(doc.get("perturbations", [])):
        at = int(_number(p, "at_iter", f"engine.perturbations[{i}]"))
        delta = _array(_require(p, "delta", f"engine.perturbations[{i}]"), (dim,),
                       f"engine.perturbations[{i}].delta")
        perts.append(Perturbation(at_iter=at, delta=delta, id=p.get("id", f"p{i}")))
    try:
        return EngineConfig(
            max_iters=int(_number(doc, "max_iters", "engine", default=200)),
            tol=_number(doc, "tol", "engine", default=1e-9),
            metric=Metric(_METRIC_ALIASES[metric_name]),
            limit_block=int(_number(doc, "limit_block", "engine", default=16)),
            nesting_depth=int(_number(doc, "nesting_depth", "engine", default=0)),
            identity_mode=bool(doc.get("identity_mode", False)),
            perturbations=tuple(perts),
            seed=int(_number(doc, "seed", "engine", default=0)),
        )
    except ValueError as exc:
        raise ScenarioError("engine", str(exc)) from exc


def _parse_initial(doc, dim: int) -> dict:
    if isinstance(doc, list):
        vec = _array(doc, (dim,), "initial")
        return {"vec": vec.tolist()}
    if isinstance(doc, dict):
        if doc.get("mode") != "random_ball":
            raise ScenarioError("initial.mode", "only 'random_ball' is supported for dict form")
        radius = _number(doc, "radius", "initial")
        if radius <= 0:
            raise ScenarioError("initial.radius", f"must be positive, got {radius}")
        return {"mode": "random_ball", "radius": float(radius)}
    raise ScenarioError("initial", f"expected a vector or random_ball spec, got {type(doc).__name__}")


def _parse_verify(doc: dict) -> VerifyConfig:
    tests = tuple(_TEST_ALIASES.get(t, t) for t in doc.get("tests", DEFAULT_TESTS))
    unknown = [t for t in tests if t not in DEFAULT_TESTS]
    if unknown:
        raise ScenarioError("verify.tests", f"unknown tests {unknown}; expected from {DEFAULT_TESTS}")
    method = doc.get("lambda_method", "to_fixed_point")
    if method not in ("to_fixed_point", "consecutive_ratio"):
        raise ScenarioError("verify.lambda_method", f"unknown method {method!r}")
    return VerifyConfig(
        tests=tests,
        starts=int(_number(doc, "starts", "verify", default=10)),
        radius=_number(doc, "radius", "verify", default=100.0),
        eps_list=tuple(doc.get("eps_list", (1e-2, 1e-3, 1e-4))),
        bound_lambda=doc.get("bound_lambda"),
        lambda_method=method,
        r2_min=_number(doc, "r2_min", "verify", default=0.9),
    )


def parse_scenario(doc: dict) -> Scenario:
    name = doc.get("name", "scenario")
    dim = _require(doc, "dim", "")
    if not isinstance(dim, int) or dim < 1:
        raise ScenarioError("dim", f"must be an integer >= 1, got {dim!r}")
    phi = _parse_phi(_require(doc, "phi", ""), dim)
    gamma = _parse_gamma(_require(doc, "gamma", ""), dim)
    engine = _parse_engine(doc.get("engine", {}), dim)
    initial = _parse_initial(_require(doc, "initial", ""), dim)
    verify = _parse_verify(doc.get("verify", {}))
    category = doc.get("category")
    return Scenario(
        name=name,
        dim=dim,
        phi=phi,
        gamma=gamma,
        engine=engine,
        initial=initial,
        category=category,
        verify=verify,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ScenarioError(str(path), "scenario file not found") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(str(path), f"invalid JSON: {exc}") from exc
    return parse_scenario(doc)
