"""semgame: a nested fixed-point engine with embedded game sub-solves.

The outer iteration contracts a semantic state toward a fixed point; each
step embeds a finite-game equilibrium solve whose outcome vector feeds the
update.  The verification suite estimates contraction factors, checks
geometric convergence bounds, probes uniqueness and perturbation recovery,
and validates finite category/functor/naturality structures.
"""

from .engine import (
    EngineConfig,
    Perturbation,
    PhiSpec,
    RunResult,
    TraceRecord,
    limit_stage,
    replay,
    run,
    step,
)
from .metric import ANGULAR, COSINE, EUCLIDEAN, Metric, SemanticState, angular_distance, distance
from .scenario import Scenario, load_scenario, parse_scenario, run_scenario
from .subgame import (
    EquilibriumResult,
    GammaSpec,
    StrategyProfile,
    SubGame,
    derive_game,
    residual,
    solve,
    tensor,
    unit_game,
)

__all__ = [
    "ANGULAR",
    "COSINE",
    "EUCLIDEAN",
    "EngineConfig",
    "EquilibriumResult",
    "GammaSpec",
    "Metric",
    "Perturbation",
    "PhiSpec",
    "RunResult",
    "Scenario",
    "SemanticState",
    "StrategyProfile",
    "SubGame",
    "TraceRecord",
    "angular_distance",
    "derive_game",
    "distance",
    "limit_stage",
    "load_scenario",
    "parse_scenario",
    "replay",
    "residual",
    "run",
    "run_scenario",
    "solve",
    "step",
    "tensor",
    "unit_game",
]

__version__ = "0.1.0"
