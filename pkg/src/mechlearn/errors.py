"""Exception types shared across the library."""


class MechlearnError(Exception):
    """Base class for library errors."""


class ShapeError(MechlearnError, ValueError):
    """An input array has the wrong dimension for the operation."""


class NumericOverflowError(MechlearnError, FloatingPointError):
    """A non-finite value appeared during evaluation or training.

    ``batch_index`` points at the first offending sample when known;
    ``context`` carries free-form location info (epoch, batch, stage).
    """

    def __init__(self, message, batch_index=None, context=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.context = context


class NearSingularHessian(MechlearnError, RuntimeError):
    """The velocity Hessian of a black-box Lagrangian is too ill conditioned.

    ``condition`` holds the offending condition number estimate and
    ``batch_index`` the sample it was observed at.
    """

    def __init__(self, message, condition=None, batch_index=None):
        super().__init__(message)
        self.condition = condition
        self.batch_index = batch_index


class DivergedRollout(MechlearnError, RuntimeError):
    """A rollout state left the sanity bound. ``step`` is the failing index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RankDeficient(MechlearnError, RuntimeError):
    """Unregularized least squares met a rank-deficient regressor.

    ``nullity`` reports the dimension of the unidentifiable subspace.
    """

    def __init__(self, message, nullity=None):
        super().__init__(message)
        self.nullity = nullity


class SeriesTooShort(MechlearnError, ValueError):
    """A time series is shorter than the filter warm-up it needs."""


class UnknownFormatVersion(MechlearnError, ValueError):
    """A data or model file declares a version this build does not read."""
