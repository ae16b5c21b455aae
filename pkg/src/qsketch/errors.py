"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: argument errors exit 2, precondition
errors exit 3, resource errors exit 4.
"""


class QSketchError(Exception):
    exit_code = 1


class ArgumentError(QSketchError, ValueError):
    exit_code = 2


class PreconditionError(QSketchError):
    exit_code = 3


class ResourceError(QSketchError):
    exit_code = 4


class InternalError(QSketchError, RuntimeError):
    exit_code = 1


class FormatError(ArgumentError):
    """Unreadable or version-incompatible binary artifact."""
