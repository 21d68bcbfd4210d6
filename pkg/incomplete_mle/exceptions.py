class IncompleteMLEError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(IncompleteMLEError):
    pass


class ParameterValidationError(IncompleteMLEError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid parameters: " + "; ".join(self.violations))


class SampleError(IncompleteMLEError):
    pass


class SingularInformationError(IncompleteMLEError):
    def __init__(self, message, label=None):
        self.label = label
        super().__init__(message)


class LoewnerOrderingError(IncompleteMLEError):
    pass


class PsiNotConvergedError(IncompleteMLEError):
    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)


class DegenerateRegimeError(IncompleteMLEError):
    pass


class StepHalvingError(IncompleteMLEError):
    pass


class ReplicateError(IncompleteMLEError):
    def __init__(self, replicate, cause):
        self.replicate = replicate
        self.cause = cause
        super().__init__(f"replicate {replicate} failed: {cause}")
