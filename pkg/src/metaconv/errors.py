"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input array or parameter violates a documented precondition."""


class LayoutOverflowError(InvalidInputError):
    """The requested tiles cannot be placed disjointly inside the mask plane."""


class WindowOverlapError(InvalidInputError):
    """Feature-map windows would overlap neighbouring tiles."""


class ParseError(ValueError):
    """A file could not be parsed. ``location`` names the line or byte offset."""

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location


class DivergenceError(RuntimeError):
    """An iterative optimisation diverged; ``trace`` holds what was recorded so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
