"""
Cure Rate Errors
Exception hierarchy shared by the services, the CLI and the HTTP router.
Each error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class CureRateError(Exception):
    """Base class for every failure the pipeline reports deliberately"""

    exit_code = 1
    code = "CURE_RATE_ERROR"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        if code:
            self.code = code

    def to_dict(self) -> dict:
        return {"code": self.code, "detail": self.message, "exit_code": self.exit_code}


# --- exit 2: unreadable input ---

class ParseError(CureRateError):
    exit_code = 2
    code = "PARSE_ERROR"


class ConfigError(ParseError):
    code = "CONFIG_ERROR"


class DuplicateLoan(ParseError):
    code = "DUPLICATE_LOAN"


# --- exit 3 ---

class DateMismatch(CureRateError):
    exit_code = 3
    code = "DATE_MISMATCH"


# --- exit 4: data that parses but breaks an invariant ---

class InvariantViolation(CureRateError):
    exit_code = 4
    code = "INVARIANT_VIOLATION"


class EmptyInput(InvariantViolation):
    code = "EMPTY_INPUT"


class ZeroRow(InvariantViolation):
    code = "ZERO_ROW"

    def __init__(self, state: int, label: str):
        super().__init__(f"State {label} (index {state}) has no observed exits")
        self.state = state


class SingularBlock(InvariantViolation):
    code = "SINGULAR_BLOCK"


class NotTransitive(InvariantViolation):
    code = "NOT_TRANSITIVE"


class FitError(InvariantViolation):
    code = "FIT_ERROR"


class TooFewPoints(FitError):
    code = "TOO_FEW_POINTS"


class DegenerateDesign(FitError):
    code = "DEGENERATE_DESIGN"


class NonConvergence(FitError):
    code = "NON_CONVERGENCE"


# --- exit 5 ---

class MissingPrerequisite(CureRateError):
    exit_code = 5
    code = "MISSING_PREREQUISITE"
