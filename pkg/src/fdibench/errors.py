"""Exception hierarchy shared across the workbench modules."""


class WorkbenchError(Exception):
    """Base class for all domain errors raised by this package."""


class CaseFormatError(WorkbenchError):
    """A case file could not be parsed (carries file/row diagnostics)."""


class CaseValidationError(WorkbenchError):
    """A network model violates a structural invariant (duplicate ids, ...)."""


class TopologyError(WorkbenchError):
    """The network graph is unusable (disconnected, singular topology)."""


class PowerFlowDivergenceError(WorkbenchError):
    """Newton-Raphson power flow failed to converge."""

    def __init__(self, message: str, max_mismatch: float | None = None):
        super().__init__(message)
        self.max_mismatch = max_mismatch


class PlanError(WorkbenchError):
    """A measurement plan references unknown buses/branches or repeats ids."""


class UnobservableError(WorkbenchError):
    """The measurement set does not determine the state (rank deficiency)."""


class EstimationDivergenceError(WorkbenchError):
    """Weighted-least-squares iteration failed to converge."""


class DegenerateAreaError(WorkbenchError):
    """An attack area produced an unusable constraint system."""


class InfeasibleDesignError(WorkbenchError):
    """Fewer changeable variables than the constraint system needs."""


class AttackInfeasibleError(WorkbenchError):
    """The attack constraint solve stalled or diverged."""

    def __init__(self, message: str, trace: tuple[float, ...] = ()):
        super().__init__(message)
        self.trace = trace


class IngestionError(WorkbenchError):
    """A demand time series file is malformed (carries the row number)."""


class PairingError(WorkbenchError):
    """Records handed to the analyzer do not belong to the same snapshot."""
