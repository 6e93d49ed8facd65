"""Exception taxonomy shared across the package.

Two families matter to callers: input problems (bad netlist text, bad
argument combinations) and numerical failures (singular factorizations,
Krylov non-convergence). The command line maps the first family to exit
code 1 and the second to exit code 2.
"""


class CircuitError(Exception):
    """Base class for everything raised deliberately by this package."""


class NetlistError(CircuitError):
    """Malformed netlist input. Carries the 1-based source line."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class NumericalError(CircuitError):
    """Base class for runtime numerical failures."""


class StructurallySingular(NumericalError):
    """A matrix has an empty row or column; no pivoting can save it."""


class NumericallySingular(NumericalError):
    """Factorization hit a pivot below the singularity threshold."""


class NoDcOperatingPoint(NumericalError):
    """The conductance system has no unique solution at t = 0."""


class NoConvergence(NumericalError):
    """Arnoldi reached the dimension cap without meeting the tolerance."""

    def __init__(self, message, m=None, estimate=None):
        super().__init__(message)
        self.m = m
        self.estimate = estimate


class BasisDegenerate(NumericalError):
    """The projected generator cannot be transformed for this variant."""
