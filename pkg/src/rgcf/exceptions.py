"""Exception hierarchy shared by all rgcf modules."""


class RGCFError(Exception):
    """Base class for errors raised by this package."""


class GraphParseError(RGCFError, ValueError):
    def __init__(self, lineno, line, reason="expected two tokens"):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: {reason}: {line!r}")


class ConfigurationError(RGCFError, ValueError):
    pass


class ContractError(RGCFError, ValueError):
    """A documented precondition of an operation was violated."""


class NumericalError(RGCFError, ArithmeticError):
    def __init__(self, message, vertex=None, pivot=None, iteration=None):
        self.vertex = vertex
        self.pivot = pivot
        self.iteration = iteration
        super().__init__(message)


class GenerationError(RGCFError, RuntimeError):
    pass


class IdMapError(RGCFError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "id map mismatch"
