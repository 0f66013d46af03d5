"""Exception hierarchy shared by every module of the package."""


class DefenseError(Exception):
    """Base class for all errors raised by ``subspace_defense``."""


class InvalidInput(DefenseError, ValueError):
    """An argument is malformed or outside its allowed range."""


class DimensionMismatch(DefenseError, ValueError):
    """Arrays that must share a dimension do not."""


class DegenerateGap(DefenseError):
    """The eigen gap between the safe subspace and its complement is not positive.

    The perturbation bounds do not apply in this case; callers have to decide
    what to report instead.
    """


class EmptySubspace(DefenseError):
    """Dimension selection found no eigenvalue above the threshold."""


class InvalidTrigger(DefenseError):
    """A trigger vector has a component inside the safe subspace."""


class NotTabular(DefenseError):
    """Exact evaluation needs a finite reachable set and this one exceeded the cap."""


class ConfigError(DefenseError, ValueError):
    """An experiment config violates the schema.

    ``path`` points at the offending field, e.g. ``"sweep.n[2]"``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
