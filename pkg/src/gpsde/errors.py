"""Exception types shared across the package."""


class GpsdeError(Exception):
    """Base class for all package errors."""


class InputError(GpsdeError, ValueError):
    """A user-supplied value violates a documented precondition."""


class DataError(GpsdeError, ValueError):
    """An input file cannot be parsed; carries file and line when known."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = str(path)
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class NumericalError(GpsdeError, RuntimeError):
    """A linear-algebra step failed, e.g. a Gram matrix that is not
    positive definite even after jitter."""


class SimulationError(GpsdeError, RuntimeError):
    """A simulated path left the representable range.

    ``step`` and ``sample`` locate the first offending update when known.
    """

    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class SensitivityError(SimulationError):
    """Sensitivity propagation produced non-finite entries."""


class InternalError(GpsdeError, RuntimeError):
    """Cached derived state does not correspond to the supplied model."""


class FitError(GpsdeError, RuntimeError):
    """Every optimisation candidate failed; carries per-candidate diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])
