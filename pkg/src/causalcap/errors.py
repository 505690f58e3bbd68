"""Exception hierarchy shared across the package."""


class CausalCapError(Exception):
    """Base class for all package errors."""


class MazeError(CausalCapError, ValueError):
    pass


class RaggedGrid(MazeError):
    pass


class UnknownChar(MazeError):
    pass


class NoFreeCell(MazeError):
    pass


class OpenBoundary(MazeError):
    pass


class InvalidState(CausalCapError, ValueError):
    pass


class BadDims(CausalCapError, ValueError):
    pass


class IndexOutOfRange(CausalCapError, IndexError):
    pass


class EmptyCounts(CausalCapError, ValueError):
    pass


class EmptyData(CausalCapError, ValueError):
    pass


class EmptyInput(CausalCapError, ValueError):
    pass


class InsufficientSamples(CausalCapError, ValueError):
    def __init__(self, state, have, need):
        super().__init__(f"state {state!r} has {have} samples, need {need}")
        self.state = state
        self.have = have
        self.need = need


class MalformedLine(CausalCapError, ValueError):
    def __init__(self, line_no, reason=""):
        msg = f"malformed record on line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line_no = line_no


class NoCandidates(CausalCapError, ValueError):
    pass


class EmptySubgoals(CausalCapError, ValueError):
    pass


class Unreachable(CausalCapError, ValueError):
    pass


class UnreachableGoal(Unreachable):
    pass


class TooFewSubgoals(CausalCapError, ValueError):
    pass


class NoSegments(CausalCapError, ValueError):
    pass


class Untrained(CausalCapError, RuntimeError):
    pass


class EmptyLabels(CausalCapError, ValueError):
    pass


class UnknownState(CausalCapError, KeyError):
    pass


class MissingDependency(CausalCapError, ValueError):
    pass


class NonConvergence(CausalCapError, RuntimeError):
    pass


class ConfigError(CausalCapError, ValueError):
    def __init__(self, key, reason):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class ParseError(ConfigError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}", reason)
        self.line_no = line_no


class UnknownKey(ConfigError):
    def __init__(self, name):
        super().__init__(name, "unknown configuration key")


class BadInput(CausalCapError, ValueError):
    pass


class UnknownCommand(CausalCapError):
    pass
