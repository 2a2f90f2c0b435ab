"""Exception types raised across the package."""


class PPLabError(Exception):
    """Base class for all package errors."""


class GraphError(PPLabError, ValueError):
    """Invalid computation graph."""


class CycleDetected(GraphError):
    pass


class MultipleLeaves(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class NonScalarLeaf(GraphError):
    pass


class DimensionMismatch(PPLabError, ValueError):
    pass


class StaleTrace(PPLabError, ValueError):
    """A forward trace was handed to a graph it was not produced by."""


class LabelOutOfRange(PPLabError, ValueError):
    pass


class EmptyDataset(PPLabError, ValueError):
    pass


class NonFiniteGradient(PPLabError, FloatingPointError):
    pass


class InvalidEpsilon(PPLabError, ValueError):
    pass


class ConfigParseError(PPLabError, ValueError):
    pass


class ObjectiveUnknown(PPLabError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class OutputUnwritable(PPLabError, OSError):
    pass


class UnknownMode(PPLabError, ValueError):
    pass


class EmptyRecords(PPLabError, ValueError):
    pass
