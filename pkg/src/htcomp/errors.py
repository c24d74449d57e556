"""Exception hierarchy shared by all modules."""


class HtcError(Exception):
    """Base class for every error raised by htcomp."""


class ParameterError(HtcError, ValueError):
    """A parameter lies outside its admissible domain."""


class DomainError(HtcError, ValueError):
    """An input has the wrong shape, is empty, or is otherwise unusable."""


class DegenerateSampleError(DomainError):
    """A sample has zero norm where a logarithm of the norm is needed."""


class PreconditionError(ParameterError):
    """A closed-form bound is evaluated outside its validity regime."""


class NumericError(HtcError, ArithmeticError):
    """A numerical routine failed (non-convergence, divergence)."""


class SVDConvergenceError(NumericError):
    def __init__(self, sweeps, off_norm):
        super().__init__(
            f"one-sided Jacobi SVD did not converge after {sweeps} sweeps "
            f"(max relative off-diagonal {off_norm:.3e})"
        )
        self.sweeps = sweeps
        self.off_norm = off_norm


class DivergenceError(NumericError):
    def __init__(self, iteration, norm):
        super().__init__(f"SGD diverged at iteration {iteration} (|w| = {norm:.3e})")
        self.iteration = iteration
        self.norm = norm


class FormatError(HtcError, ValueError):
    """A weight file does not match the binary layout."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class EmptyResultError(NumericError):
    """Every configuration of a sweep failed, so there is nothing to report."""
