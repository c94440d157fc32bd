"""Exception types shared across the package."""


class MPFError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MPFError, ValueError):
    """Tensor or layer shapes are incompatible."""


class GraphError(MPFError):
    """Invalid graph construction or evaluation order."""


class SpecError(MPFError, ValueError):
    """An architecture description is malformed or infeasible.

    ``diagnostics`` holds one message per problem found.
    """

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class DataError(MPFError):
    """A data file or manifest is missing, malformed or inconsistent."""


class FormatError(DataError):
    """A binary file does not follow its declared format."""


class DivergenceError(MPFError):
    """Training produced a non-finite loss."""
