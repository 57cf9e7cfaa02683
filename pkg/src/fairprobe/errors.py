"""Exception types raised across the package."""


class FairProbeError(Exception):
    pass


class DimensionMismatch(FairProbeError, ValueError):
    pass


class NonFiniteGradient(FairProbeError, FloatingPointError):
    pass


class Divergence(FairProbeError, FloatingPointError):
    pass


class BadLayer(FairProbeError, IndexError):
    pass


class SchemaMismatch(FairProbeError, ValueError):
    pass


class ParseError(FairProbeError, ValueError):
    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column!r})" if column is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.column = column


class EmptyDataset(FairProbeError, ValueError):
    pass


class EmptyPairs(FairProbeError, ValueError):
    pass


class NoDiscrimination(FairProbeError):
    """The AS curve has zero area: no neuron reacts to the sensitive flip."""


class NoBiasProfile(FairProbeError, ValueError):
    pass


class EmptySeedSet(FairProbeError, ValueError):
    pass


class LengthMismatch(FairProbeError, ValueError):
    pass


class TooFewValues(FairProbeError, ValueError):
    pass


class UndefinedGD(FairProbeError, ZeroDivisionError):
    pass
