"""Exception and warning types shared across the toolkit."""


class SaekitError(Exception):
    """Base class for toolkit errors."""


class InputError(SaekitError):
    """Bad input data, file, or configuration (CLI exit code 1)."""


class MicrodataError(InputError):
    """Malformed survey microdata or item-map configuration."""


class ConvergenceError(SaekitError):
    """Variance-component optimization failed (CLI exit code 2).

    Carries the last iterate and gradient norm for diagnostics.
    """

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class PipelineStageError(SaekitError):
    """Wraps a failure inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class DegenerateDesignWarning(UserWarning):
    """All design weights equal one; the variance estimator collapses to zero."""


class SingleUnitDomainWarning(UserWarning):
    """A domain with a single sampled unit has no variance estimate."""


class ModelComparisonWarning(UserWarning):
    """Information-criterion comparison requested on fits where it is shaky."""
