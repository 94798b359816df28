"""Exception hierarchy shared across kinelift.

Two families: :class:`InputError` for malformed or inconsistent inputs and
:class:`NumericalError` for failures that arise during computation. The CLI
maps them to exit codes 2 and 3.
"""


class KineliftError(Exception):
    """Base class for all kinelift errors."""


class InputError(KineliftError, ValueError):
    """Invalid arguments, files or configurations."""


class NumericalError(KineliftError, ArithmeticError):
    """Non-finite values or degenerate numerical configurations."""


class LengthMismatch(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class FrameMismatch(InputError):
    pass


class WrongFrame(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormat(InputError):
    pass


class BehindCamera(NumericalError):
    def __init__(self, joint_index):
        super().__init__(f"joint {joint_index} is at or behind the camera plane (z <= 0)")
        self.joint_index = joint_index


class DegenerateScale(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class NonFiniteFunction(NumericalError):
    pass


class DivergedNonFinite(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass
