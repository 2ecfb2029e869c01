"""Exception hierarchy shared across the package."""


class CatdagError(Exception):
    """Base class for all package errors."""


class ShapeError(CatdagError, ValueError):
    pass


class CycleError(CatdagError, ValueError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("graph contains a cycle through " + " -> ".join(map(str, self.cycle)))


class SelfLoopError(CatdagError, ValueError):
    pass


class GraphParseError(CatdagError, ValueError):
    pass


class WidthError(CatdagError, ValueError):
    pass


class ConfigError(CatdagError, ValueError):
    pass


class NonFiniteError(CatdagError, FloatingPointError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class DomainError(CatdagError, ValueError):
    pass


class EmptyGroupError(CatdagError, ValueError):
    pass


class HeaderMismatchError(CatdagError, ValueError):
    pass


class ParseError(CatdagError, ValueError):
    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)


class MissingValueError(ParseError):
    pass


class BinaryValueError(MissingValueError):
    """A binary column holds something other than 0 or 1."""
