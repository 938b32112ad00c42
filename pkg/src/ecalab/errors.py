"""Exception types shared across ecalab."""


class EcaError(Exception):
    """Base class for all ecalab errors."""


class ShapeError(EcaError, ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        dims = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {dims}")


class DomainError(EcaError, ArithmeticError):
    """A value falls outside the mathematical domain of an operation."""

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"{op}: domain violation"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ContractError(EcaError, RuntimeError):
    """A precondition of a call was not met."""


class ConfigError(EcaError, ValueError):
    """Invalid configuration value; `field` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
