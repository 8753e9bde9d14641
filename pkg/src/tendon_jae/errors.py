"""Exception types raised across the package."""


class TendonJAEError(Exception):
    """Base class for all package errors."""


class ModelValidationError(TendonJAEError, ValueError):
    """A model/config document violates an invariant.

    ``path`` locates the first offending entry, e.g. ``joints[3].axis``.
    """

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class AngleOutOfRange(TendonJAEError, ValueError):
    def __init__(self, joint, value):
        self.joint = joint
        self.value = value
        super().__init__(f"angle {value!r} rad outside limits of joint {joint!r}")


class LengthMismatch(TendonJAEError, ValueError):
    pass


class DimensionMismatch(TendonJAEError, ValueError):
    pass


class DoubleCalibration(TendonJAEError, ValueError):
    pass


class CapacityExceeded(TendonJAEError, ValueError):
    pass


class InsufficientSamples(TendonJAEError, ValueError):
    pass


class RankDeficient(TendonJAEError, ValueError):
    def __init__(self, rank, size, condition):
        self.rank = rank
        self.size = size
        self.condition = condition
        super().__init__(
            f"Gram matrix rank {rank} < {size} (condition estimate {condition:.3e}); "
            "use a positive ridge or more samples"
        )


class ValidationFailed(TendonJAEError, ValueError):
    """Group configuration is invalid. ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"[{v.code}] {v.path}: {v.message}" for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class NonFinite(TendonJAEError, ValueError):
    pass


class SingularInnovation(TendonJAEError, ArithmeticError):
    pass


class EmptyLog(TendonJAEError, ValueError):
    pass
