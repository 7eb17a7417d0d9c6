"""Exception hierarchy shared by all hybridlik modules."""


class HybridLikError(Exception):
    """Base class for every error raised by this package."""


class UnsupportedModel(HybridLikError):
    pass


class NumericalFailure(HybridLikError):
    """A computation produced a non-finite or degenerate result.

    ``index`` carries the offending observation/row when one is known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularMatrix(NumericalFailure):
    pass


class InvalidLevel(HybridLikError):
    pass


class InvalidCells(HybridLikError):
    pass


class InvalidInput(HybridLikError):
    pass


class InvalidGrid(HybridLikError):
    pass


class OptimizationFailure(NumericalFailure):
    pass


class DegenerateControls(NumericalFailure):
    pass


class DegenerateFocus(NumericalFailure):
    pass


class ProfileInfeasible(NumericalFailure):
    pass


class WideFitFailure(NumericalFailure):
    pass


class UnsupportedControls(HybridLikError):
    pass
