"""Error hierarchy shared by every package under src/.

Validation problems (bad input, bad configuration) exit the CLI with code 2,
numerical failures with code 3.
"""


class ToolkitError(Exception):
    exit_code = 3


class ValidationError(ToolkitError):
    exit_code = 2


class NumericalError(ToolkitError):
    exit_code = 3


# ---------------------- validation ----------------------

class ExpressionSyntaxError(ValidationError):
    def __init__(self, message, offset, expected=(), source=""):
        self.offset = offset
        self.expected = frozenset(expected)
        self.source = source
        hint = f"; expected one of {sorted(self.expected)}" if self.expected else ""
        super().__init__(f"syntax error at offset {offset}: {message}{hint}")


class UnknownIdentifierError(ValidationError):
    def __init__(self, name, offset):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier '{name}' at offset {offset}")


class ScenarioError(ValidationError):
    pass


class OffGridError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class UnsupportedConfigurationError(ValidationError):
    pass


# ---------------------- numerical ----------------------

class DomainError(NumericalError):
    pass


class ExponentRangeError(NumericalError):
    pass


class NoRootError(NumericalError):
    pass


class StepRejectedError(NumericalError):
    pass


class FoldContactError(NumericalError):
    pass


class ProjectionError(NumericalError):
    pass


class ShockTrackingError(NumericalError):
    pass


class AdmissibilityError(NumericalError):
    pass


class TuningError(NumericalError):
    pass


class RegularityError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class BoundaryContactError(NumericalError):
    pass


class BoxTooSmallError(NumericalError):
    pass
