"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, shapes, ids)."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


class NotDecomposedError(LookupError):
    """Raised when a node has no stored sparse weight vector."""


class TrainingAborted(NumericalError):
    """Training hit a non-finite loss; carries the last good state.

    Attributes
    ----------
    params, store, report
        Transform parameters, weight store and report from the last
        iteration whose objective was finite.
    """

    def __init__(self, message, params=None, store=None, report=None):
        super().__init__(message)
        self.params = params
        self.store = store
        self.report = report
