"""Exception types shared across the pipeline."""


class PullError(Exception):
    """Base class for all errors raised by pull_logs."""


class EmptyCorpusError(PullError, ValueError):
    pass


class InvalidSpecError(PullError, ValueError):
    pass


class DegenerateDatasetError(PullError, ValueError):
    """Raised when one of the two weak-label classes is empty."""


class InvalidConfigError(PullError, ValueError):
    pass


class ShapeError(PullError, ValueError):
    pass


class NumericError(PullError, FloatingPointError):
    """A loss, score or gradient became non-finite."""


class CheckpointError(PullError, ValueError):
    pass
