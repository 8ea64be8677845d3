"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`PlardError`
and carries an ``exit_code`` the command line maps to its process status:
1 validation, 2 I/O, 3 numerical.
"""


class PlardError(Exception):
    exit_code = 1


class ValidationError(PlardError, ValueError):
    exit_code = 1


class InputError(PlardError, OSError):
    """Unreadable or malformed on-disk input."""

    exit_code = 2


class NumericalError(PlardError, ArithmeticError):
    exit_code = 3


# lidar_io
class TruncatedRecord(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class MissingKey(InputError):
    pass


class WrongArity(InputError):
    pass


class InvalidCalibration(ValidationError):
    pass


# adt
class OutOfBounds(ValidationError):
    pass


class WindowTooSmall(ValidationError):
    pass


# autodiff / model
class ShapeMismatch(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


# evalkit
class DimensionMismatch(ValidationError):
    pass


class NoPositives(ValidationError):
    pass


class SingularHomography(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


# synthscene
class DegenerateGeometry(ValidationError):
    pass
