"""Exception hierarchy shared by the solver modules."""


class KBundleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(KBundleError, ValueError):
    pass


class SolverFailureError(KBundleError):
    """An iterative kernel hit its iteration cap.

    The best iterate found so far is kept on ``best`` so callers can decide
    whether it is usable.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateBundleError(KBundleError):
    pass


class DegenerateConstraintsError(KBundleError):
    """The linearizations do not cut out an affine set of the right dimension."""


class SingularSystemError(KBundleError):
    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class UnboundedSubproblemError(KBundleError):
    def __init__(self, message, min_eigenvalue=float("-inf")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InsufficientCandidatesError(KBundleError):
    pass


class DegenerateCandidatesError(KBundleError):
    pass


class GenerationFailureError(KBundleError):
    pass
