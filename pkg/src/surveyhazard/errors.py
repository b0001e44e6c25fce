"""Exception hierarchy.

Every error carries a ``category`` that the command-line front end turns
into an exit code.
"""


class SurveyHazardError(Exception):
    category = "error"


class ValidationError(SurveyHazardError):
    """Input data or configuration violates a documented invariant."""

    category = "validation"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class PartitionError(ValidationError):
    """A hazard partition cannot be used with the given data."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class InfeasibleError(SurveyHazardError):
    """Estimated risk counts are not positive under the supplied parameters."""

    category = "infeasible"

    def __init__(self, message, event_index=None):
        super().__init__(message)
        self.event_index = event_index


class SingularInformationError(SurveyHazardError):
    category = "infeasible"

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class NotConvergedError(SurveyHazardError):
    category = "not_converged"

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
