"""Shared builders: canonical games, affine scenarios, category specs."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from semgame.category import FiniteCategory, FunctorSpec, Morphism, NatTransSpec
from semgame.subgame import StrategyProfile, SubGame

# Prisoner's Dilemma with T=5 > R=3 > P=1 > S=0; action 0 = Cooperate, 1 = Defect.
PD_T, PD_R, PD_P, PD_S = 5.0, 3.0, 1.0, 0.0


def prisoners_dilemma(dim: int = 2, defect_outcome=(2.0, 0.0)) -> SubGame:
    p1 = np.array([[PD_R, PD_S], [PD_T, PD_P]])
    outcomes = np.zeros((2, 2, dim))
    outcomes[1, 1, : len(defect_outcome)] = defect_outcome
    return SubGame(2, (2, 2), (p1, p1.T), outcomes)


def matching_pennies(dim: int = 2) -> SubGame:
    p1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return SubGame(2, (2, 2), (p1, -p1), np.zeros((2, 2, dim)))


def biased_matching_pennies(dim: int = 2) -> SubGame:
    """Zero-sum game with a non-uniform mixed equilibrium and no pure one."""
    p1 = np.array([[3.0, -1.0], [-1.0, 1.0]])
    return SubGame(2, (2, 2), (p1, -p1), np.zeros((2, 2, dim)))


def zero_game(players: int = 2, actions=(2, 2), dim: int = 2) -> SubGame:
    payoffs = tuple(np.zeros(actions) for _ in range(players))
    return SubGame(players, tuple(actions), payoffs, np.zeros(tuple(actions) + (dim,)))


def random_game(rng: np.random.Generator, players: int, actions: tuple[int, ...], dim: int = 2) -> SubGame:
    payoffs = tuple(rng.standard_normal(actions) for _ in range(players))
    outcomes = rng.standard_normal(actions + (dim,))
    return SubGame(players, actions, payoffs, outcomes)


# ---------------------------------------------------------------------------
# Independent oracles (kept free of semgame solver internals).

def oracle_pure_equilibria(g: SubGame) -> list[tuple[int, ...]]:
    """Brute force: a joint action is Nash iff no unilateral deviation gains."""
    eqs = []
    for joint in itertools.product(*(range(a) for a in g.actions)):
        is_eq = True
        for player in range(g.players):
            current = g.payoffs[player][joint]
            for alt in range(g.actions[player]):
                dev = list(joint)
                dev[player] = alt
                if g.payoffs[player][tuple(dev)] > current + 1e-12:
                    is_eq = False
                    break
            if not is_eq:
                break
        if is_eq:
            eqs.append(joint)
    return eqs


def oracle_residual(g: SubGame, profile: StrategyProfile) -> float:
    """Residual by explicit enumeration over joint actions (no einsum)."""
    worst = 0.0
    for player in range(g.players):
        current = 0.0
        dev_payoff = [0.0] * g.actions[player]
        for joint in itertools.product(*(range(a) for a in g.actions)):
            prob = 1.0
            prob_others = 1.0
            for j, a in enumerate(joint):
                prob *= profile.mixtures[j][a]
                if j != player:
                    prob_others *= profile.mixtures[j][a]
            current += prob * g.payoffs[player][joint]
            dev_payoff[joint[player]] += prob_others * g.payoffs[player][joint]
        worst = max(worst, max(dev_payoff) - current)
    return max(0.0, worst)


def oracle_grid_equilibrium_2x2(g: SubGame, points: int = 1001) -> tuple[float, float]:
    """Both players' first-action probabilities minimizing the residual on a grid."""
    ps = np.linspace(0.0, 1.0, points)
    P, Q = np.meshgrid(ps, ps, indexing="ij")
    a = g.payoffs[0]
    bmat = g.payoffs[1]
    # expected payoff of each pure row action for player 0 given q
    row0 = a[0, 0] * Q + a[0, 1] * (1 - Q)
    row1 = a[1, 0] * Q + a[1, 1] * (1 - Q)
    cur0 = P * row0 + (1 - P) * row1
    gain0 = np.maximum(row0, row1) - cur0
    col0 = bmat[0, 0] * P + bmat[1, 0] * (1 - P)
    col1 = bmat[0, 1] * P + bmat[1, 1] * (1 - P)
    cur1 = Q * col0 + (1 - Q) * col1
    gain1 = np.maximum(col0, col1) - cur1
    res = np.maximum(gain0, gain1)
    idx = np.unravel_index(np.argmin(res), res.shape)
    return float(ps[idx[0]]), float(ps[idx[1]])


# ---------------------------------------------------------------------------
# Scenario documents.

def affine_scenario_doc(
    lam: float,
    dim: int = 8,
    seed: int = 7,
    tol: float = 1e-9,
    max_iters: int = 600,
    name: str | None = None,
    initial=None,
    rotate: bool = False,
) -> dict:
    """Affine contraction with exact factor lam.

    Default M = lam * I, so distances to the fixed point and step sizes both
    shrink by exactly lam per step: estimates and iteration counts have
    closed-form truths.  rotate=True uses lam * Q for a seeded orthogonal Q
    (same distance decay, direction-dependent step sizes).
    """
    rng = np.random.default_rng(seed)
    if rotate:
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        M = lam * Q
    else:
        M = lam * np.eye(dim)
    b = rng.standard_normal(dim)
    if initial is None:
        initial = (rng.standard_normal(dim) * 10.0).tolist()
    return {
        "name": name or f"affine-l{lam}",
        "dim": dim,
        "initial": initial,
        "phi": {"M": M.tolist(), "b": b.tolist(), "beta": 0.0},
        "gamma": {
            "mode": "static",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [np.zeros((2, 2)).tolist(), np.zeros((2, 2)).tolist()],
            "outcomes": np.zeros((2, 2, dim)).tolist(),
            "damping": 0.5,
            "tol": 1e-9,
            "max_iters": 200,
        },
        "engine": {
            "max_iters": max_iters,
            "tol": tol,
            "metric": "euclidean",
            "limit_block": 16,
            "seed": seed,
        },
    }


def pd_scenario_doc(seed: int = 3, beta: float = 0.5) -> dict:
    """Static Prisoner's Dilemma feeding its (Defect, Defect) outcome vector."""
    pd = prisoners_dilemma()
    return {
        "name": "static-pd",
        "dim": 2,
        "initial": [0.0, 0.0],
        "phi": {"M": (0.5 * np.eye(2)).tolist(), "b": [0.0, 0.0], "beta": beta},
        "gamma": {
            "mode": "static",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [p.tolist() for p in pd.payoffs],
            "outcomes": pd.outcomes.tolist(),
            "damping": 0.5,
            "tol": 1e-9,
            "max_iters": 200,
        },
        "engine": {"max_iters": 300, "tol": 1e-9, "limit_block": 16, "seed": seed},
    }


def oscillator_scenario_doc(dim: int = 2) -> dict:
    """x -> -x: norm-1 map with no contraction; a diagnostic input."""
    return {
        "name": "oscillator",
        "dim": dim,
        "initial": [1.0] * dim,
        "phi": {"M": (-np.eye(dim)).tolist(), "b": [0.0] * dim, "beta": 0.0},
        "gamma": {
            "mode": "static",
            "players": 2,
            "actions": [2, 2],
            "payoffs": [np.zeros((2, 2)).tolist(), np.zeros((2, 2)).tolist()],
            "outcomes": np.zeros((2, 2, dim)).tolist(),
        },
        "engine": {"max_iters": 64, "tol": 1e-9, "limit_block": 16, "seed": 0},
    }


# ---------------------------------------------------------------------------
# Category builders.

def chain_category() -> FiniteCategory:
    """X -> Y -> Z with the composite, plus identities: the smallest
    category with a non-trivial associativity surface."""
    objects = ["X", "Y", "Z"]
    morphisms = [
        Morphism("idX", "X", "X"),
        Morphism("idY", "Y", "Y"),
        Morphism("idZ", "Z", "Z"),
        Morphism("f", "X", "Y"),
        Morphism("g", "Y", "Z"),
        Morphism("gf", "X", "Z"),
    ]
    identities = {"X": "idX", "Y": "idY", "Z": "idZ"}
    composition = {}
    by_id = {m.id: m for m in morphisms}
    for a in morphisms:
        for bm in morphisms:
            if bm.dst != a.src:
                continue
            if a.id.startswith("id"):
                composition[(a.id, bm.id)] = bm.id
            elif bm.id.startswith("id"):
                composition[(a.id, bm.id)] = a.id
            elif a.id == "g" and bm.id == "f":
                composition[(a.id, bm.id)] = "gf"
    del by_id
    return FiniteCategory(objects, morphisms, composition, identities)


def parallel_pair_category() -> FiniteCategory:
    """Two objects with two parallel morphisms A -> B (room for composition
    mutations that stay well-typed)."""
    objects = ["A", "B"]
    morphisms = [
        Morphism("idA", "A", "A"),
        Morphism("idB", "B", "B"),
        Morphism("u", "A", "B"),
        Morphism("v", "A", "B"),
    ]
    identities = {"A": "idA", "B": "idB"}
    composition = {
        ("idA", "idA"): "idA",
        ("idB", "idB"): "idB",
        ("u", "idA"): "u",
        ("v", "idA"): "v",
        ("idB", "u"): "u",
        ("idB", "v"): "v",
    }
    return FiniteCategory(objects, morphisms, composition, identities)


def iso_pair_category() -> FiniteCategory:
    """Two isomorphic objects."""
    objects = ["P", "Q"]
    morphisms = [
        Morphism("idP", "P", "P"),
        Morphism("idQ", "Q", "Q"),
        Morphism("i", "P", "Q"),
        Morphism("j", "Q", "P"),
    ]
    identities = {"P": "idP", "Q": "idQ"}
    composition = {
        ("idP", "idP"): "idP",
        ("idQ", "idQ"): "idQ",
        ("i", "idP"): "i",
        ("idQ", "i"): "i",
        ("j", "idQ"): "j",
        ("idP", "j"): "j",
        ("j", "i"): "idP",
        ("i", "j"): "idQ",
    }
    return FiniteCategory(objects, morphisms, composition, identities)


def poset_chain_category(n: int = 4) -> FiniteCategory:
    """Total order 0 <= 1 <= ... <= n-1 as a category: hom-sets of size <= 1."""
    objects = [f"o{i}" for i in range(n)]
    morphisms = []
    for i in range(n):
        for j in range(i, n):
            morphisms.append(Morphism(f"le{i}{j}", f"o{i}", f"o{j}"))
    identities = {f"o{i}": f"le{i}{i}" for i in range(n)}
    composition = {}
    for j in range(n):
        for k in range(j, n):
            for i in range(j, -1, -1):
                composition[(f"le{j}{k}", f"le{i}{j}")] = f"le{i}{k}"
    return FiniteCategory(objects, morphisms, composition, identities)


def identity_functor(c: FiniteCategory) -> FunctorSpec:
    return FunctorSpec(
        obj_map={x: x for x in c.objects},
        mor_map={m.id: m.id for m in c.morphisms},
    )


def identity_nat_trans(c: FiniteCategory, F: FunctorSpec) -> NatTransSpec:
    return NatTransSpec(components={x: c.identities[F.obj_map[x]] for x in c.objects})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
