"""Exception types shared across the solver stack."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (mesh size, weights, tolerances)."""


class AssemblyCorruptionError(RuntimeError):
    """An assembled operator violates a structural guarantee (e.g. nonpositive
    lumped-mass entry)."""


class InteriorViolationError(RuntimeError):
    """A primal gap or dual multiplier left the strict interior."""


class IndefiniteOperatorError(RuntimeError):
    """CG met nonpositive curvature; carries the last iterate for diagnosis."""

    def __init__(self, message, iterate=None, iteration=None):
        super().__init__(message)
        self.iterate = iterate
        self.iteration = iteration


class InnerSolveError(RuntimeError):
    """An inner elliptic block solve failed to reach its tolerance."""

    def __init__(self, message, block=None, report=None):
        super().__init__(message)
        self.block = block
        self.report = report


class LineSearchError(RuntimeError):
    """Backtracking fell below the minimum step length; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MaxStepsError(RuntimeError):
    """The outer optimization loop hit its step budget before converging."""
