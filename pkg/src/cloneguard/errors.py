"""Exception hierarchy shared by all cloneguard modules."""


class CloneGuardError(Exception):
    """Base class for all domain errors raised by this package."""


class CapacityError(CloneGuardError):
    """State space too large for dense enumeration."""


class InfiniteDivergenceError(CloneGuardError):
    """KL divergence is +inf (p1 has mass where p2 has none)."""


class PositivityError(CloneGuardError):
    """An operation required a strictly positive distribution."""


class SchemaError(CloneGuardError):
    """A file (model, dataset, config, report) violates its schema.

    ``path`` is a dotted field path into the offending document.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NoUnstableDirectionError(CloneGuardError):
    """The FIM is numerically zero, so no poison direction exists."""


class TrainingDivergedError(CloneGuardError):
    """The training objective became non-finite."""

    def __init__(self, sweep, message="training objective is not finite"):
        self.sweep = sweep
        super().__init__(f"{message} (sweep {sweep})")
