"""Semantic states and the distances used by every convergence check.

A state is a fixed-dimension real vector with an identity tag.  Three
distance kinds are supported:

* ``euclidean`` -- the L2 norm of the difference; a true metric.
* ``cosine``    -- 1 minus cosine similarity.  Kept verbatim because it is
  the conventional embedding distance, but it fails the triangle
  inequality, so contraction-bound checks should not use it.
* ``angular``   -- arccos of the clamped cosine similarity; the true-metric
  repair of ``cosine``, with values in [0, pi].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroVector

METRIC_KINDS = ("euclidean", "cosine", "angular")


@dataclass(frozen=True)
class SemanticState:
    """A point of the iteration space: an id tag plus a finite real vector."""

    id: str
    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise DimensionMismatch(f"state vector must be 1-d with dim >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"state {self.id!r} has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)

    @property
    def dim(self) -> int:
        return self.vec.shape[0]

    def with_vec(self, vec: np.ndarray, id: str | None = None) -> "SemanticState":
        return SemanticState(self.id if id is None else id, vec)

    def to_json(self) -> dict:
        return {"id": self.id, "vec": self.vec.tolist()}

    @staticmethod
    def from_json(doc: dict) -> "SemanticState":
        return SemanticState(doc["id"], np.asarray(doc["vec"], dtype=np.float64))


@dataclass(frozen=True)
class Metric:
    """A named distance function over semantic states."""

    kind: str = "euclidean"

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}; expected one of {METRIC_KINDS}")

    def __call__(self, a: SemanticState, b: SemanticState) -> float:
        return distance(self, a, b)

    @property
    def is_true_metric(self) -> bool:
        """Whether the triangle inequality holds (cosine does not satisfy it)."""
        return self.kind != "cosine"


EUCLIDEAN = Metric("euclidean")
COSINE = Metric("cosine")
ANGULAR = Metric("angular")


def _check_dims(a: SemanticState, b: SemanticState) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"state dims differ: {a.dim} vs {b.dim}")


def _cosine_similarity(a: SemanticState, b: SemanticState) -> float:
    na = float(np.linalg.norm(a.vec))
    nb = float(np.linalg.norm(b.vec))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    if np.array_equal(a.vec, b.vec):
        # dot/norm rounding can land one ulp below 1, which arccos would
        # amplify to ~1e-8; identical inputs must give similarity exactly 1
        return 1.0
    return float(np.dot(a.vec, b.vec)) / (na * nb)


def distance(m: Metric, a: SemanticState, b: SemanticState) -> float:
    """Distance between two states under metric ``m``; always >= 0."""
    _check_dims(a, b)
    if m.kind == "euclidean":
        return float(np.linalg.norm(a.vec - b.vec))
    if m.kind == "cosine":
        return max(0.0, 1.0 - _cosine_similarity(a, b))
    return angular_distance(a, b)


def angular_distance(a: SemanticState, b: SemanticState) -> float:
    """Angle in [0, pi] between the two state vectors.

    Equals arccos of the cosine similarity clamped to [-1, 1]; unlike
    ``1 - cos``, this satisfies the triangle inequality.
    """
    _check_dims(a, b)
    sim = _cosine_similarity(a, b)
    return float(np.arccos(np.clip(sim, -1.0, 1.0)))
