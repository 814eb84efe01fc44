"""Exception hierarchy.

Every error raised by the package derives from :class:`LfgpError`; the CLI
maps the three intermediate classes onto exit codes.
"""


class LfgpError(Exception):
    """Base class for package errors."""


class ConfigError(LfgpError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(LfgpError):
    """Malformed, ragged or otherwise unusable input data (exit code 3)."""


class NumericalError(LfgpError):
    """A numerical routine could not produce a valid result (exit code 4)."""


# spd geometry
class NotPositiveDefinite(NumericalError):
    def __init__(self, message, min_eigenvalue=None, location=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.location = location


class NotSymmetric(NumericalError):
    pass


class BadLength(DataError):
    pass


class DimMismatch(DataError):
    pass


# sliding windows / kernels
class WindowTooLong(ConfigError):
    pass


class GridNotSorted(DataError):
    pass


class NonPositiveTheta(NumericalError):
    pass


# sampler
class NumericalBreakdown(NumericalError):
    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class SingularDesign(NumericalError):
    pass


class EmptyChain(DataError):
    pass


class SamplerError(NumericalError):
    """Wraps a failure inside a Gibbs sweep with the iteration index."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


# baselines
class KTooLarge(ConfigError):
    pass


class DegenerateState(NumericalError):
    pass


# evaluation
class MissingLabel(DataError):
    pass


class TooFewDraws(DataError):
    pass


class EmptyTrain(DataError):
    pass


class NoSecondClass(DataError):
    pass


class NoConvergence(NumericalError):
    pass


# io
class RaggedTrials(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class VersionMismatch(DataError):
    pass


class HashMismatch(DataError):
    pass
