"""Exception hierarchy.

Every error raised by the library derives from :class:`TwostepError`.  The CLI
maps :class:`ValidationError` subclasses to exit code 2 and every other
library error to exit code 3.
"""

from __future__ import annotations


class TwostepError(Exception):
    """Base class for library errors."""

    def details(self) -> dict:
        return {}


class ValidationError(TwostepError, ValueError):
    """Bad user input (unknown names, malformed files, bad parameters)."""

    def __init__(self, message, identifier=None):
        super().__init__(message)
        self.identifier = identifier

    def details(self):
        return {} if self.identifier is None else {"identifier": self.identifier}


class BalanceError(TwostepError, ValueError):
    """Two measures that must carry equal mass do not."""

    def __init__(self, message, mass_a=None, mass_b=None):
        super().__init__(message)
        self.mass_a = mass_a
        self.mass_b = mass_b

    def details(self):
        return {"mass_a": self.mass_a, "mass_b": self.mass_b}


class MapEvaluationError(TwostepError):
    """A map failed (raised or returned non-finite output) at a support point."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = int(index)

    def details(self):
        return {"index": self.index}


class OutsideGridError(TwostepError, ValueError):
    def __init__(self, message, count):
        super().__init__(message)
        self.count = int(count)

    def details(self):
        return {"count": self.count}


class DomainError(TwostepError, ValueError):
    """Defining function inconsistent with its boundary samples."""


class ConvexityError(TwostepError, ValueError):
    def __init__(self, message, witness=None, eigenvalue=None):
        super().__init__(message)
        self.witness = None if witness is None else [float(t) for t in witness]
        self.eigenvalue = eigenvalue

    def details(self):
        return {"witness": self.witness, "eigenvalue": self.eigenvalue}


class DerivativeEvaluationError(TwostepError, FloatingPointError):
    """Non-finite value inside a finite-difference stencil."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else [float(t) for t in point]

    def details(self):
        return {"point": self.point}


class ConditioningError(TwostepError, FloatingPointError):
    def __init__(self, message, eigenvalues=None, point=None):
        super().__init__(message)
        self.eigenvalues = None if eigenvalues is None else [float(t) for t in eigenvalues]
        self.point = None if point is None else [float(t) for t in point]

    def details(self):
        return {"eigenvalues": self.eigenvalues, "point": self.point}


class SingularityError(TwostepError, FloatingPointError):
    """Singular kernel evaluated at (or too near) its singularity."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair

    def details(self):
        return {"pair": self.pair}


class SizeError(TwostepError, ValueError):
    pass


class ConvergenceError(TwostepError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

    def details(self):
        return {"residual": self.residual, "iterations": self.iterations}


class MultivaluedMapError(TwostepError):
    def __init__(self, message, row, fraction):
        super().__init__(message)
        self.row = int(row)
        self.fraction = float(fraction)

    def details(self):
        return {"row": self.row, "dominant_fraction": self.fraction}


class InconsistencyError(TwostepError):
    """Internal consistency check failed (e.g. stationarity of the inner minimiser)."""

    def __init__(self, message, residual=None, pair=None):
        super().__init__(message)
        self.residual = residual
        self.pair = pair

    def details(self):
        return {"residual": self.residual, "pair": self.pair}


class ConditionFailure(TwostepError):
    """A structural hypothesis required before solving does not hold."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

    def details(self):
        return {} if self.report is None else {"report": self.report.to_dict()}


class SolverStageError(TwostepError):
    """Wraps an inner failure with the fixed-point iteration index."""

    def __init__(self, message, iteration, cause):
        super().__init__(message)
        self.iteration = int(iteration)
        self.cause = cause

    def details(self):
        inner = self.cause.details() if isinstance(self.cause, TwostepError) else {}
        return {"iteration": self.iteration, "cause": type(self.cause).__name__, **inner}
