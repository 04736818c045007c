"""
Cure Rate Diagnostics
Machine-readable warnings attached to results and reports
"""

import logging
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    """A warning with a stable code and a human message"""
    code: str
    message: str

    def to_dict(self) -> Dict[str, str]:
        return asdict(self)


def warn(code: str, message: str) -> Diagnostic:
    """Log a warning and return it as a Diagnostic"""
    logger.warning("⚠️ %s: %s", code, message)
    return Diagnostic(code=code, message=message)


def as_dicts(diagnostics: Iterable[Diagnostic]) -> List[Dict[str, str]]:
    return [d.to_dict() for d in diagnostics]
