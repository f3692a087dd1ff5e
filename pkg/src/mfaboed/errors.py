"""Exception hierarchy.

Input problems (bad files, dangling labels, malformed designs) derive from
``InputError``; numerical failures (singular systems, dead posteriors) derive
from ``NumericalError``.  The CLI maps the two families to exit codes 2 and 3.
"""


class MFAError(Exception):
    """Base class for all package errors."""


class InputError(MFAError, ValueError):
    pass


class NumericalError(MFAError, ArithmeticError):
    pass


class SpecError(InputError):
    """A model-spec or observation file failed validation."""

    def __init__(self, message, *, path=None, field=None, line=None):
        self.path = path
        self.field = field
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class PatternMismatchError(InputError):
    """Allocation matrix zero pattern disagrees with the structure's edge set."""


class StructuralCycleError(NumericalError):
    """(I - Phi^T) is singular or numerically near-singular."""

    def __init__(self, message, nodes=(), model_index=None):
        self.nodes = tuple(nodes)
        self.model_index = model_index
        super().__init__(message)


class InfeasibleFlowError(NumericalError):
    """Solved nodal flows are negative beyond round-off."""


class DegeneratePosteriorError(NumericalError):
    """Every candidate structure received zero posterior mass."""
