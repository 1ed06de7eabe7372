"""Exception hierarchy shared across the package."""


class ExeCheckerError(Exception):
    """Base class for all domain errors raised by exechecker."""


class ParseError(ExeCheckerError, ValueError):
    """A file could not be parsed."""


class SchemaError(ExeCheckerError, ValueError):
    """A file parsed but does not match the expected schema."""


class DegenerateError(ExeCheckerError, ValueError):
    """An input is numerically degenerate (zero scale, zero-norm vector)."""


class LengthError(ExeCheckerError, ValueError):
    """A sequence is too short for the requested operation."""


class SpecError(ExeCheckerError, ValueError):
    """A synthetic data specification is invalid."""


class ShapeError(ExeCheckerError, ValueError):
    """Tensor operands have incompatible shapes."""


class GraphError(ExeCheckerError, RuntimeError):
    """Autodiff graph misuse, e.g. backward from a non-scalar."""


class InsufficientDataError(ExeCheckerError, ValueError):
    """Not enough sequences to compose a triplet."""


class RankError(ExeCheckerError, ValueError):
    """Covariance could not be repaired by ridge regularization."""


class AnnotationError(ExeCheckerError, ValueError):
    """A joints-of-attention annotation is empty or invalid."""


class UnknownExerciseError(ExeCheckerError, KeyError):
    """The embedding database has no entry for an exercise."""


class EmptyError(ExeCheckerError, ValueError):
    """An operation received an empty collection."""
