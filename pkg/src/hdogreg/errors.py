"""Exception hierarchy shared by the library and the command line."""


class HDoGRegError(Exception):
    """Base class; ``category`` is reported by the CLI."""

    category = "data"
    exit_code = 4


class ParameterError(HDoGRegError, ValueError):
    category = "parameter"
    exit_code = 3


class FormatError(HDoGRegError):
    category = "format"
    exit_code = 2


class DataError(HDoGRegError):
    category = "data"
    exit_code = 4
