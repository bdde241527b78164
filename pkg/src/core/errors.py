"""
Exception types shared across the package.

Numerical code raises ValidationError when a precondition does not hold.
Parsers raise ParseError, which additionally records where in the input
the problem was found so the command line can print a useful diagnostic.
"""
from typing import Optional


class ValidationError(ValueError):
    """Raised when a domain value or a combination of values is invalid."""


class ParseError(ValidationError):
    """
    Raised when a text document cannot be turned into domain objects.

    Attributes:
        source (str): File name or a short description of the input
        line (int): 1-based line number, if known
        field (str): Field name or JSON path, if known
    """

    def __init__(
        self,
        message: str,
        source: Optional[str] = None,
        line: Optional[int] = None,
        field: Optional[str] = None
    ):
        self.message = message
        self.source = source
        self.line = line
        self.field = field
        super().__init__(self._format())

    def _format(self) -> str:
        where = []
        if self.source:
            where.append(str(self.source))
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(f"field '{self.field}'")
        if where:
            return f"{', '.join(where)}: {self.message}"
        return self.message
