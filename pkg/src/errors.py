"""
Exception hierarchy shared by the library and the command line.
Every error carries the process exit code the CLI reports for it.
"""
from typing import Any, Optional


class HalError(Exception):
    """Base class for all learner errors"""

    exit_code = 3
    kind = "Runtime error"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class ConfigError(HalError):
    """Invalid configuration or model construction parameters"""

    exit_code = 2
    kind = "Config error"


class DomainError(HalError):
    """Argument outside the mathematical domain of an operation"""

    kind = "Domain error"


class ModelKindError(HalError):
    """Operation called on the wrong variant of a model"""

    kind = "Model kind error"


class ExhaustedQueryError(HalError):
    """Replay dataset has no shots left for a query"""

    kind = "Exhausted query"


class ParseError(HalError):
    """Malformed dataset or run-log file"""

    kind = "Parse error"

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SingularityError(HalError):
    """Jacobian requested at a degenerate parameter point"""

    kind = "Singularity"


class NumericalError(HalError):
    """Non-finite loss or non-PSD matrix"""

    kind = "Numerical error"

    def __init__(self, message: str, query_index: Optional[int] = None):
        if query_index is not None:
            message = f"{message} (query index {query_index})"
        super().__init__(message)
        self.query_index = query_index


class InfeasibleError(HalError):
    """Upper bounds of a query distribution cannot sum to one"""

    kind = "Infeasible bounds"


class PolicyError(HalError):
    """Query-space growth requested under a fixed policy"""

    kind = "Policy error"


class BudgetExhaustedError(HalError):
    """Not enough shots left to fill a batch"""

    kind = "Budget exhausted"

    def __init__(self, message: str, record: Any = None):
        super().__init__(message)
        self.record = record


class MissingDataError(HalError):
    """A query in the space has no recorded shots"""

    kind = "Missing data"


class WeakSignalError(HalError):
    """Rabi curves too flat to estimate a frequency"""

    kind = "Weak signal"


class RangeError(HalError):
    """Requested value lies outside the range of a curve or window"""

    kind = "Range error"


class AnalysisError(HalError):
    """Run logs cannot support the requested analysis"""

    kind = "Analysis error"
