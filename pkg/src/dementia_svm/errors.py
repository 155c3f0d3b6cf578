"""Exception hierarchy. `DataError` maps to CLI exit code 1, `ConvergenceError` to 2."""


class PipelineError(Exception):
    pass


class DataError(PipelineError, ValueError):
    """Bad input data: unreadable files, malformed manifests, invalid values."""


class MalformedHeaderError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class TruncatedDataError(DataError):
    pass


class EmptySliceError(DataError):
    pass


class DegenerateVolumeError(DataError):
    pass


class ConvergenceError(PipelineError):
    pass
