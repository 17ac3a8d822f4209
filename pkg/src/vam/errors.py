"""Error types shared across the package.

Each error carries a short machine-parseable code and the process exit
code the CLI maps it to (0 ok, 2 validation, 3 estimation, 4 I/O).
"""


class VamError(Exception):
    code = "ERROR"
    exit_code = 1


class ValidationError(VamError):
    """Bad input data or configuration."""

    code = "VALIDATION"
    exit_code = 2


class EstimationError(VamError):
    """Model fitting or downstream numeric failure."""

    code = "ESTIMATION"
    exit_code = 3


class OutputError(VamError):
    """Reading or writing files failed."""

    code = "IO"
    exit_code = 4
