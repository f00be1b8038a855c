"""Exception hierarchy shared by every module."""


class ScLabError(Exception):
    """Base class for all library errors."""


class InputError(ScLabError, ValueError):
    """Malformed input: wrong shapes, bad parameters, unreadable files."""


class DimensionMismatch(InputError):
    pass


class InvalidParameter(InputError):
    pass


class InvalidGrid(InputError):
    pass


class EmptyInput(InputError):
    pass


class MissingReturn(InputError):
    pass


class SpecParseError(InputError):
    """Raised by the MDP file loader; carries a line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NonStochasticRow(InputError):
    def __init__(self, where, total):
        self.where = where
        self.total = total
        super().__init__(f"{where} sums to {total!r}, not 1")


class NonTerminatingChain(ScLabError):
    pass


class SuccessUnreachable(ScLabError):
    def __init__(self, states, message=None):
        self.states = list(states)
        super().__init__(message or f"success unreachable from states {self.states}")


class ProxySuccessUnreachable(SuccessUnreachable):
    pass


class SolverFailure(ScLabError):
    pass


class SupportMismatch(ScLabError):
    pass


class HorizonGuardTripped(ScLabError):
    pass


class ConsistencyError(ScLabError, AssertionError):
    """Two independent computations of the same quantity disagree."""
