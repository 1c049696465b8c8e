"""Finite games embedded in the outer iteration, and their equilibrium solver.

Each iteration of the outer update derives a finite game (1-3 players) from
the current state, solves it to a Nash-residual tolerance, and feeds the
expected outcome vector (the "resolution") back into the update.

Solver strategy, in order:

1. the uniform profile, accepted immediately if its residual is already
   within tolerance (covers all-equal games and symmetric coordination-free
   games whose equilibrium is uniform);
2. an exhaustive scan over pure joint profiles for small games (<= 4 actions
   per player), which returns exact pure equilibria where they exist;
3. damped simultaneous best response on the simplex,
   ``profile <- (1 - damping) * profile + damping * best_response``.

Ties among best responses break to the lowest action index so that solved
games replay deterministically.  Non-convergence is not an error: the best
profile seen is returned flagged ``converged=False`` and the caller decides
policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadSpec,
    DegenerateGame,
    DimensionMismatch,
    PlayerCountMismatch,
    ShapeMismatch,
)
from .metric import SemanticState

# Residual at or below this counts as an exact pure equilibrium in the scan.
PURE_SCAN_EPS = 1e-12

MAX_PLAYERS = 3


@dataclass(frozen=True)
class SubGame:
    """A finite game plus the semantic influence vector of every outcome.

    payoffs[i] is player i's real payoff tensor, indexed by the joint
    action; outcomes maps each joint action to a vector of dimension `dim`
    (the semantic influence of that outcome on the outer state).
    """

    players: int
    actions: tuple[int, ...]
    payoffs: tuple[np.ndarray, ...] = field(repr=False)
    outcomes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.players <= MAX_PLAYERS:
            raise BadSpec(f"players must be in 1..{MAX_PLAYERS}, got {self.players}")
        if len(self.actions) != self.players:
            raise BadSpec(f"need {self.players} action counts, got {len(self.actions)}")
        if any(a < 0 for a in self.actions):
            raise BadSpec(f"negative action count in {self.actions}")
        payoffs = tuple(np.asarray(p, dtype=np.float64) for p in self.payoffs)
        if len(payoffs) != self.players:
            raise BadSpec(f"need {self.players} payoff tensors, got {len(payoffs)}")
        for i, p in enumerate(payoffs):
            if p.shape != self.actions:
                raise BadSpec(f"payoff tensor {i} has shape {p.shape}, expected {self.actions}")
            if not np.all(np.isfinite(p)):
                raise BadSpec(f"payoff tensor {i} has non-finite entries")
        outcomes = np.asarray(self.outcomes, dtype=np.float64)
        if outcomes.ndim != self.players + 1 or outcomes.shape[:-1] != self.actions:
            raise BadSpec(
                f"outcomes must have shape {self.actions} + (dim,), got {outcomes.shape}"
            )
        if not np.all(np.isfinite(outcomes)):
            raise BadSpec("outcome vectors have non-finite entries")
        for p in payoffs:
            p.setflags(write=False)
        outcomes.setflags(write=False)
        object.__setattr__(self, "payoffs", payoffs)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def dim(self) -> int:
        return self.outcomes.shape[-1]


@dataclass(frozen=True)
class StrategyProfile:
    """One probability vector over actions per player."""

    mixtures: tuple[np.ndarray, ...]

    def __post_init__(self):
        mixtures = tuple(np.asarray(m, dtype=np.float64) for m in self.mixtures)
        for i, m in enumerate(mixtures):
            if m.ndim != 1:
                raise ShapeMismatch(f"mixture {i} must be a vector, got shape {m.shape}")
            if np.any(m < -1e-12):
                raise ShapeMismatch(f"mixture {i} has negative probabilities")
            if abs(float(m.sum()) - 1.0) > 1e-12:
                raise ShapeMismatch(f"mixture {i} sums to {m.sum()!r}, not 1")
            m.setflags(write=False)
        object.__setattr__(self, "mixtures", mixtures)

    @staticmethod
    def uniform(actions: tuple[int, ...]) -> "StrategyProfile":
        return StrategyProfile(tuple(np.full(a, 1.0 / a) for a in actions))

    @staticmethod
    def pure(actions: tuple[int, ...], joint: tuple[int, ...]) -> "StrategyProfile":
        mixtures = []
        for a, k in zip(actions, joint):
            m = np.zeros(a)
            m[k] = 1.0
            mixtures.append(m)
        return StrategyProfile(tuple(mixtures))

    def to_json(self) -> list[list[float]]:
        return [m.tolist() for m in self.mixtures]

    @staticmethod
    def from_json(doc: list) -> "StrategyProfile":
        return StrategyProfile(tuple(np.asarray(m, dtype=np.float64) for m in doc))


@dataclass(frozen=True)
class EquilibriumResult:
    """Solver output: profile, its Nash residual, and the resolution vector."""

    profile: StrategyProfile
    residual: float
    resolution: np.ndarray = field(repr=False)
    iterations: int
    converged: bool

    def to_json(self) -> dict:
        return {
            "profile": self.profile.to_json(),
            "residual": self.residual,
            "resolution": self.resolution.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @staticmethod
    def from_json(doc: dict) -> "EquilibriumResult":
        return EquilibriumResult(
            profile=StrategyProfile.from_json(doc["profile"]),
            residual=doc["residual"],
            resolution=np.asarray(doc["resolution"], dtype=np.float64),
            iterations=doc["iterations"],
            converged=doc["converged"],
        )


@dataclass(frozen=True)
class GammaSpec:
    """How the embedded game depends on the state.

    mode "static": `game` is played unchanged at every iteration.
    mode "state_derived": payoffs[i] = payoff_maps[i] . state (a fixed linear
    map per joint action), outcome vectors fixed; this keeps the response
    operator Lipschitz in the state.
    """

    mode: str
    game: SubGame | None = None
    payoff_maps: tuple[np.ndarray, ...] | None = None
    actions: tuple[int, ...] | None = None
    outcomes: np.ndarray | None = None
    damping: float = 0.5
    tol: float = 1e-9
    max_iters: int = 1000
    name: str = "gamma"

    def __post_init__(self):
        if self.mode not in ("static", "state_derived"):
            raise BadSpec(f"gamma mode must be 'static' or 'state_derived', got {self.mode!r}")
        if not 0.0 < self.damping <= 1.0:
            raise BadSpec(f"damping must be in (0, 1], got {self.damping}")
        if self.tol <= 0:
            raise BadSpec(f"subgame tol must be positive, got {self.tol}")
        if self.mode == "static":
            if self.game is None:
                raise BadSpec("static mode requires a game")
        else:
            if self.payoff_maps is None or self.actions is None or self.outcomes is None:
                raise BadSpec("state_derived mode requires payoff_maps, actions and outcomes")
            maps = tuple(np.asarray(w, dtype=np.float64) for w in self.payoff_maps)
            expected = tuple(self.actions)
            for i, w in enumerate(maps):
                if w.shape[:-1] != expected:
                    raise BadSpec(
                        f"payoff_map {i} has shape {w.shape}, expected {expected} + (dim,)"
                    )
            object.__setattr__(self, "payoff_maps", maps)
            object.__setattr__(self, "actions", expected)
            object.__setattr__(self, "outcomes", np.asarray(self.outcomes, dtype=np.float64))

    @property
    def players(self) -> int:
        return self.game.players if self.mode == "static" else len(self.payoff_maps)

    @property
    def dim(self) -> int:
        game_outcomes = self.game.outcomes if self.mode == "static" else self.outcomes
        return int(game_outcomes.shape[-1])


def derive_game(state: SemanticState, spec: GammaSpec) -> SubGame:
    """Build the game the current state induces under ``spec``."""
    if spec.mode == "static":
        return spec.game
    maps = spec.payoff_maps
    if maps[0].shape[-1] != state.dim:
        raise BadSpec(
            f"payoff_maps expect state dim {maps[0].shape[-1]}, got {state.dim}"
        )
    payoffs = tuple(np.tensordot(w, state.vec, axes=([-1], [0])) for w in maps)
    return SubGame(
        players=len(maps),
        actions=spec.actions,
        payoffs=payoffs,
        outcomes=spec.outcomes,
    )


def _check_profile(g: SubGame, p: StrategyProfile) -> None:
    if len(p.mixtures) != g.players:
        raise ShapeMismatch(f"profile has {len(p.mixtures)} mixtures for {g.players} players")
    for i, (m, a) in enumerate(zip(p.mixtures, g.actions)):
        if m.shape[0] != a:
            raise ShapeMismatch(f"mixture {i} has {m.shape[0]} entries, game has {a} actions")


def deviation_payoffs(g: SubGame, p: StrategyProfile, player: int) -> np.ndarray:
    """Expected payoff of each pure action of ``player`` against the others' mixtures."""
    letters = "abc"[: g.players]
    operands: list[np.ndarray] = [g.payoffs[player]]
    subs = [letters]
    for j, m in enumerate(p.mixtures):
        if j != player:
            operands.append(m)
            subs.append(letters[j])
    return np.einsum(",".join(subs) + "->" + letters[player], *operands)


def residual(g: SubGame, p: StrategyProfile) -> float:
    """Max unilateral expected-payoff improvement; zero exactly at Nash equilibria."""
    _check_profile(g, p)
    worst = 0.0
    for i in range(g.players):
        dev = deviation_payoffs(g, p, i)
        current = float(np.dot(dev, p.mixtures[i]))
        gain = float(dev.max()) - current
        if gain > worst:
            worst = gain
    return worst


def best_response(g: SubGame, p: StrategyProfile, player: int) -> int:
    """Index of the best pure reply; ties break to the lowest index."""
    return int(np.argmax(deviation_payoffs(g, p, player)))


def resolution_vector(g: SubGame, p: StrategyProfile) -> np.ndarray:
    """Expected outcome vector under the profile."""
    letters = "abc"[: g.players]
    operands: list[np.ndarray] = [g.outcomes]
    subs = [letters + "z"]
    for j, m in enumerate(p.mixtures):
        operands.append(m)
        subs.append(letters[j])
    return np.einsum(",".join(subs) + "->z", *operands)


def _result(g: SubGame, p: StrategyProfile, r: float, iters: int, ok: bool) -> EquilibriumResult:
    return EquilibriumResult(
        profile=p,
        residual=r,
        resolution=resolution_vector(g, p),
        iterations=iters,
        converged=ok,
    )


def pure_equilibria(g: SubGame, eps: float = PURE_SCAN_EPS) -> list[tuple[int, ...]]:
    """All pure joint actions with residual <= eps, in lexicographic order."""
    found = []
    for joint in itertools.product(*(range(a) for a in g.actions)):
        if residual(g, StrategyProfile.pure(g.actions, joint)) <= eps:
            found.append(joint)
    return found


def solve(
    g: SubGame,
    tol: float = 1e-9,
    max_iters: int = 1000,
    damping: float = 0.5,
    seed: int = 0,
) -> EquilibriumResult:
    """Find an (approximate) Nash equilibrium of ``g``.

    Args:
        g: the game to solve.
        tol: residual at or below which the profile counts as solved.
        max_iters: cap on damped best-response iterations.
        damping: step size of the simplex update, in (0, 1]; 1.0 is pure
            (undamped) best response.
        seed: accepted for the determinism contract; the solver itself is
            fully deterministic and draws no randomness.

    Returns:
        EquilibriumResult; ``converged=False`` means max_iters elapsed and
        the best profile seen is returned.  That is a flagged result, not
        an error -- the engine decides how to treat it.
    """
    del seed
    if tol <= 0:
        raise BadSpec(f"tol must be positive, got {tol}")
    if not 0.0 < damping <= 1.0:
        raise BadSpec(f"damping must be in (0, 1], got {damping}")
    if any(a == 0 for a in g.actions):
        raise DegenerateGame(f"action counts {g.actions} include zero")

    p = StrategyProfile.uniform(g.actions)
    r = residual(g, p)
    if r <= tol:
        return _result(g, p, r, 0, True)
    best_p, best_r = p, r

    if max(g.actions) <= 4:
        pures = pure_equilibria(g)
        if pures:
            pure = StrategyProfile.pure(g.actions, pures[0])
            return _result(g, pure, residual(g, pure), 0, True)

    for it in range(1, max_iters + 1):
        replies = [best_response(g, p, i) for i in range(g.players)]
        mixtures = []
        for m, reply in zip(p.mixtures, replies):
            target = np.zeros_like(m)
            target[reply] = 1.0
            nxt = (1.0 - damping) * m + damping * target
            mixtures.append(nxt / nxt.sum())
        p = StrategyProfile(tuple(mixtures))
        r = residual(g, p)
        if r < best_r:
            best_p, best_r = p, r
        if r <= tol:
            return _result(g, p, r, it, True)
    return _result(g, best_p, best_r, max_iters, False)


def unit_game(players: int, dim: int) -> SubGame:
    """The tensor unit: one action per player, zero payoffs, zero outcome."""
    actions = (1,) * players
    payoffs = tuple(np.zeros(actions) for _ in range(players))
    return SubGame(players, actions, payoffs, np.zeros(actions + (dim,)))


def tensor(g1: SubGame, g2: SubGame) -> SubGame:
    """Parallel composition: product action spaces, payoffs and outcomes add.

    The joint action of player i is ``x_i * g2.actions[i] + y_i`` for
    component actions (x_i, y_i), so nested tensors flatten identically and
    associativity holds up to exact index equality.
    """
    if g1.players != g2.players:
        raise PlayerCountMismatch(f"{g1.players} vs {g2.players} players")
    if g1.dim != g2.dim:
        raise DimensionMismatch(f"outcome dims differ: {g1.dim} vs {g2.dim}")
    p = g1.players
    shape1, shape2 = [], []
    for n1, n2 in zip(g1.actions, g2.actions):
        shape1 += [n1, 1]
        shape2 += [1, n2]
    joint = tuple(n1 * n2 for n1, n2 in zip(g1.actions, g2.actions))
    payoffs = tuple(
        (g1.payoffs[i].reshape(shape1) + g2.payoffs[i].reshape(shape2)).reshape(joint)
        for i in range(p)
    )
    outcomes = (
        g1.outcomes.reshape(shape1 + [g1.dim]) + g2.outcomes.reshape(shape2 + [g2.dim])
    ).reshape(joint + (g1.dim,))
    return SubGame(p, joint, payoffs, outcomes)
