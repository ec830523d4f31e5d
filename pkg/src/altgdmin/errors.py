"""Exception hierarchy shared by every module."""


class AltGDminError(Exception):
    """Base class for all errors raised by this package."""


class RankDeficient(AltGDminError):
    pass


class DimensionMismatch(AltGDminError, ValueError):
    pass


class NonPositiveThreshold(AltGDminError, ValueError):
    pass


class BadRank(AltGDminError, ValueError):
    pass


class BadColumn(AltGDminError, IndexError):
    pass


class BadGamma(AltGDminError, ValueError):
    pass


class AllZeroData(RankDeficient):
    """Every measurement is zero, so the spectral surrogate has rank 0."""


class NonFiniteIterate(AltGDminError, FloatingPointError):
    pass


class ReductionOverflow(AltGDminError, OverflowError):
    """A fixed-point partial sum left the int64 range reserved for it."""


class ConfigError(AltGDminError, ValueError):
    pass


class ColumnUnderdetermined(AltGDminError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"columns with too few observations: {self.columns}")


class RowUnderdetermined(AltGDminError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"rows with too few observations: {self.rows}")


class MatrixFormatError(AltGDminError, ValueError):
    pass


class IncoherenceRejected(AltGDminError):
    """No draw within the retry budget met the requested incoherence bound."""
