"""Exception types shared across semgame modules."""


class SemgameError(Exception):
    """Base class for all semgame errors."""


class DimensionMismatch(SemgameError):
    """Vector or matrix dimensions disagree."""


class ZeroVector(SemgameError):
    """Cosine/angular distance is undefined for a zero vector."""


class BadSpec(SemgameError):
    """A game or update definition is internally inconsistent."""


class ShapeMismatch(SemgameError):
    """A strategy profile does not match the game's action counts."""


class PlayerCountMismatch(SemgameError):
    """Two games with different player counts cannot be combined."""


class DegenerateGame(SemgameError):
    """A game with an empty action set cannot be solved."""


class InsufficientTrace(SemgameError):
    """The trace is too short for the requested window."""


class SpecMismatch(SemgameError):
    """A trace does not match the configuration it is replayed against."""


class InsufficientSignal(SemgameError):
    """Too few trace records far enough from the fixed point to estimate a ratio."""


class NoRecovery(SemgameError):
    """An injected perturbation never re-converged within max_iters."""


class MalformedTable(SemgameError):
    """A category's composition or identity table is structurally unusable."""


class MalformedSpec(SemgameError):
    """A functor or transformation spec references unknown objects/morphisms."""


class UnknownObject(SemgameError):
    """An object label is not in the category."""


class NotACone(SemgameError):
    """Cone legs violate the compatibility condition over the chain."""


class ScenarioError(SemgameError):
    """Scenario file invalid; carries the offending field path.

    The field path (e.g. ``phi.M``) is prepended to the message so CLI
    errors always name what to fix.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
