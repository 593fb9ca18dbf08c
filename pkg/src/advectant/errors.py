"""Exception types shared across the package."""


class AdvectantError(Exception):
    pass


class DimensionError(AdvectantError, ValueError):
    """Operand shapes or axes do not satisfy an operation's contract."""


class InputError(AdvectantError, ValueError):
    """Invalid input values (non-finite positions, out-of-range labels...)."""


class StatisticsError(AdvectantError, ValueError):
    """Batch statistics are undefined (e.g. single-element batch norm)."""


class GraphError(AdvectantError, RuntimeError):
    """Autodiff graph misuse (e.g. backward on a non-scalar)."""


class FormatError(AdvectantError, ValueError):
    """Malformed dataset or checkpoint file."""


class DataError(AdvectantError, ValueError):
    """Well-formed file with invalid contents (label out of range...)."""


class TrainingAbort(AdvectantError, RuntimeError):
    """Training stopped on non-finite loss or gradients."""
