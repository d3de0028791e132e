"""Exception hierarchy shared by all gnssrag modules."""


class GnssRagError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GnssRagError, ValueError):
    """A caller-supplied parameter is outside its documented domain."""


class DataIntegrityError(GnssRagError):
    """Input data contains NaN/Inf or otherwise violates a data invariant."""


class ContractError(GnssRagError):
    """An interface contract (e.g. a declared dimension) was violated."""


class UniquenessError(GnssRagError):
    """An identifier that must be unique already exists."""


class EmptyIndexError(GnssRagError):
    """Operation requires a non-empty index."""


class FormatError(GnssRagError):
    """A persisted file is corrupt or has an unknown magic/version.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TransportError(GnssRagError):
    """A remote endpoint could not be reached or the connection failed."""


class RemoteTimeoutError(TransportError):
    """A remote call exceeded its configured timeout."""


class MalformedResponseError(GnssRagError):
    """A remote endpoint answered with a payload outside the wire contract."""


class NotEstimableError(GnssRagError):
    """A regression estimate is undefined for the given neighborhood."""


class LeakageError(GnssRagError):
    """Train/test ids overlap where disjointness is required."""


class NumericalError(GnssRagError):
    """An optimization produced non-finite values.

    ``iteration`` names the iteration at which the failure was detected.
    """

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ConfigError(GnssRagError):
    """A pipeline configuration file is invalid or incomplete."""
