"""Exception types shared across the package.

Every domain error carries a stable ``code`` string; the CLI prints it on
stderr so scripts can match on it.
"""


class AdaptSurvError(Exception):
    code = "E_DOMAIN"


class ValidationError(AdaptSurvError, ValueError):
    code = "E_VALIDATION"

    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


class ParseError(AdaptSurvError, ValueError):
    code = "E_PARSE"

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ScheduleExceedsHorizon(AdaptSurvError):
    code = "E_SCHEDULE_EXCEEDS_HORIZON"


class ConditionAViolation(AdaptSurvError):
    """Allocation was offered information from after the entry time."""

    code = "E_CONDITION_A"


class EmptyRiskSet(AdaptSurvError):
    code = "E_EMPTY_RISK_SET"


class InformationNotReached(AdaptSurvError):
    code = "E_INFORMATION_NOT_REACHED"


class NoEvents(AdaptSurvError):
    code = "E_NO_EVENTS"


class SingularInformation(AdaptSurvError):
    code = "E_SINGULAR_INFORMATION"


class MinimumInformation(AdaptSurvError):
    code = "E_MINIMUM_INFORMATION"


class NotConverged(AdaptSurvError):
    code = "E_NOT_CONVERGED"

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class QuadratureFailure(AdaptSurvError):
    code = "E_QUADRATURE"


class InsufficientReplicates(AdaptSurvError):
    code = "E_INSUFFICIENT_REPLICATES"


class TiedEventTimesWarning(UserWarning):
    """Ingested data contain tied event times; Breslow handling applied."""
