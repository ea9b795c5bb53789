"""Exception types shared across the solver stack."""


class SmokeCtrlError(Exception):
    """Base class for all package errors."""


class NonConvergence(SmokeCtrlError):
    """An iterative solve missed its tolerance within the configured budget.

    Attributes:
        residual: final residual norm when the budget ran out.
        context: free-form description of the failing solve (may include a
            timestep or iteration index supplied by the caller).
    """

    def __init__(self, message, residual=None, context=None):
        super().__init__(message)
        self.residual = residual
        self.context = context


class TruncationOverflow(SmokeCtrlError):
    """Taylor truncation of the advection exponential exceeded its term cap.

    Signals that dt * |v| / h is too large for the configured cap.
    """

    def __init__(self, message, k_cap=None, last_term_norm=None):
        super().__init__(message)
        self.k_cap = k_cap
        self.last_term_norm = last_term_norm


class SingularBlock(SmokeCtrlError):
    """A cell block in the coupled smoother has a vanishing pivot."""


class MaxIterations(SmokeCtrlError):
    """Outer loop hit its iteration guard; carries the best result so far."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class LineSearchFailure(SmokeCtrlError):
    """Backtracking line search could not find an acceptable step."""


class FormatError(SmokeCtrlError):
    """A keyframe or field file could not be parsed."""


class SpecMismatch(SmokeCtrlError):
    """A loaded field does not match the expected grid specification."""
