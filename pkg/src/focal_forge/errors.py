"""Exception hierarchy shared by all modules."""

from __future__ import annotations

import numpy as np


class FocalForgeError(Exception):
    """Base class for every error raised by the package."""


class DomainError(FocalForgeError, ValueError):
    """Input lies outside the domain of an operation.

    The message names the violated constraint and the measured residual.
    """

    def __init__(self, constraint: str, residual: float | None = None):
        self.constraint = constraint
        self.residual = residual
        msg = constraint if residual is None else f"{constraint} (residual {residual:.3e})"
        super().__init__(msg)


class DimensionError(FocalForgeError, ValueError):
    """Shapes or dimensions of the inputs do not fit together."""


class IntegrationError(FocalForgeError, RuntimeError):
    """The ODE integrator gave up; carries the last time that was reached."""

    def __init__(self, message: str, last_time: float):
        self.last_time = float(last_time)
        super().__init__(f"{message} (last good time {self.last_time:.12g})")


class CorankAmbiguityError(FocalForgeError, RuntimeError):
    """Singular values at a candidate focal time do not show the declared gap."""

    def __init__(self, time: float, spectrum, gap: float):
        self.time = float(time)
        self.spectrum = np.asarray(spectrum, dtype=float).copy()
        self.gap = float(gap)
        spec = ", ".join(f"{s:.3e}" for s in self.spectrum)
        super().__init__(
            f"ambiguous corank at t={self.time:.12g}: no gap >= {self.gap:g} in spectrum [{spec}]"
        )


class DegeneracyError(FocalForgeError, RuntimeError):
    """A numerical construction lost rank; carries the offending spectrum."""

    def __init__(self, message: str, spectrum=None):
        self.spectrum = None if spectrum is None else np.asarray(spectrum, dtype=float).copy()
        if self.spectrum is not None:
            message = message + " spectrum=[" + ", ".join(f"{s:.3e}" for s in self.spectrum) + "]"
        super().__init__(message)


class PreconditionError(FocalForgeError, ValueError):
    """An operation was called outside its documented precondition."""


class ConstructionError(FocalForgeError, ValueError):
    """Input data is insufficient to build the requested object."""


class LookupFailure(FocalForgeError, KeyError):
    """Unknown identifier (scenario, table, ...)."""

    def __str__(self):  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""
