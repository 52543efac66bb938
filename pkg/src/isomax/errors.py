"""Exception hierarchy shared by every module."""


class IsoMaxError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IsoMaxError, ValueError):
    """Array shapes do not line up."""


class NumericError(IsoMaxError, ArithmeticError):
    """A NaN or infinity showed up where only finite values are allowed."""


class ContractError(IsoMaxError, ValueError):
    """A precondition on argument values was violated."""


class SpecError(IsoMaxError, ValueError):
    """An architecture or experiment description is inconsistent."""


class ParseError(IsoMaxError, ValueError):
    """A data or config file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
