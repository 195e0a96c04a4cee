"""Exception types shared across the engine."""


class AuditLoopError(Exception):
    """Base class for every library-raised error."""


class InvalidParams(AuditLoopError):
    """A parameter violates its documented range or consistency rule."""


class IncompatibleTemplate(AuditLoopError):
    """An adapter template names a slot its family cannot attach to."""


class EmptySpace(AuditLoopError):
    """Audit-space construction produced zero units."""


class ShapeMismatch(AuditLoopError):
    """Vector or weight-matrix dimensions are inconsistent."""


class NonFiniteUtility(AuditLoopError):
    """An audit utility was NaN or infinite."""


class NeverAudited(AuditLoopError):
    """A score was requested for a unit that has no audit history."""


class LengthMismatch(AuditLoopError):
    """Parallel vectors disagree in length."""


class NonPositiveCost(AuditLoopError):
    """A unit cost is zero or negative."""


class TooLarge(AuditLoopError):
    """Exhaustive enumeration was requested above the instance-size cap."""


class UnknownSibling(AuditLoopError):
    """A size change targets a unit that does not exist in the audit space."""


class InactiveUnit(AuditLoopError):
    """A marginal was requested for a unit whose gate is off."""


class MalformedTrace(AuditLoopError):
    """A replay trace file is syntactically or structurally invalid."""


class UnknownConfiguration(AuditLoopError):
    """A replay oracle was queried with an unrecorded gate vector."""


class MalformedLog(AuditLoopError):
    """An event log is missing required records or fields."""


class BudgetViolation(AuditLoopError):
    """A committed configuration exceeded the parameter budget."""
