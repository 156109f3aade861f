"""Exception hierarchy shared by the numerical kernel, the models and the CLI."""


class FdmcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FdmcError, ValueError):
    pass


class DomainError(FdmcError, ValueError):
    pass


class NumericalError(FdmcError, ArithmeticError):
    """Failure of a numerical routine. Mapped to CLI exit code 3."""


class NotPSDError(NumericalError):
    pass


class UnsupportedModelError(NumericalError):
    """Model outside the regime a closed-form routine can handle."""


class DegeneratePopulationError(FdmcError, ValueError):
    pass


class ScenarioError(FdmcError, ValueError):
    """Invalid scenario document. Mapped to CLI exit code 2."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
