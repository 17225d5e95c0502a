"""Exception family shared across the package."""


class IdemLabError(Exception):
    """Base class for all package errors."""


class ZeroMassCode(IdemLabError):
    """Code index has zero probability mass (empty or null-probability preimage)."""


class InvalidRate(IdemLabError):
    """Requested code alphabet exceeds the source alphabet."""


class RankDeficient(IdemLabError):
    """Sample covariance is singular; transform fit impossible."""


class CorruptStream(IdemLabError):
    """Bitstream failed a magic/version/length consistency check."""


class NonFinite(IdemLabError):
    """A sampling chain produced a non-finite coordinate (guidance too strong)."""


class OutOfRange(IdemLabError):
    """Parameter outside its documented interval."""


class LengthMismatch(IdemLabError):
    """Paired inputs have incompatible lengths or shapes."""


class NoOverlap(IdemLabError):
    """Rate ranges of two curves do not intersect."""


class DegenerateMoments(IdemLabError):
    """Sample moments could not be fitted (too few samples or non-finite values)."""


class ConfigError(IdemLabError):
    """Experiment configuration failed to parse or validate."""
