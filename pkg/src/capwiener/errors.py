"""Exception hierarchy shared by every module."""


class CapWienerError(Exception):
    """Base class for all package errors."""


class SpecOutOfBox(CapWienerError):
    pass


class EmptySet(CapWienerError):
    pass


class NonpositiveRadius(CapWienerError):
    pass


class NotConverged(CapWienerError):
    pass


class InconsistentGrid(CapWienerError):
    pass


class NewtonDiverged(CapWienerError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class LinearSolveStalled(CapWienerError):
    pass


class ScheduleTooShort(CapWienerError):
    pass


class DegenerateDomain(CapWienerError):
    pass


class ConfigParse(CapWienerError):
    def __init__(self, message, field=None, line=None):
        loc = ""
        if field is not None:
            loc += f"[{field}] "
        if line is not None:
            loc += f"(line {line}) "
        super().__init__(loc + message)
        self.field = field
        self.line = line


class ScenarioAborted(CapWienerError):
    pass


class UnknownSuite(CapWienerError):
    pass


class MissingReport(CapWienerError):
    pass
