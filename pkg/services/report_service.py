"""
Cure Rate Report Service
Pydantic models of the cure-rate report and validation against the
published JSON schema
"""

import json
import logging
import os
from functools import lru_cache
from typing import Any, Dict, List, Optional

from jsonschema import Draft202012Validator
from pydantic import BaseModel, Field

from services.errors import InvariantViolation, MissingPrerequisite, ParseError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
SCHEMA_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                           "schemas", "cure_rate_report.schema.json")


class WarningModel(BaseModel):
    code: str
    message: str


class CommunicationClassModel(BaseModel):
    members: List[int]
    labels: List[str]
    closed: bool
    mixes_performing: bool = False


class ClassificationModel(BaseModel):
    verdict: str
    classes: List[CommunicationClassModel]
    offending_classes: List[CommunicationClassModel] = Field(default_factory=list)


class EarlyWarningModel(BaseModel):
    from_state: int
    to_state: int
    expected_time: float


class SurvivalPointsModel(BaseModel):
    x: List[float]
    s: List[float]
    delta: Optional[float] = None


class WeibullFitModel(BaseModel):
    lambda_: float
    k: float
    se_lambda: Optional[float] = None
    se_k: Optional[float] = None
    t_lambda: Optional[float] = None
    t_k: Optional[float] = None
    r_squared: float
    p_one_sided_k_le_1: float
    df: int
    n_points_used: int
    method: str
    r_squared_scale: str


class HazardModel(BaseModel):
    x: List[float]
    h: List[float]
    monotone_increasing: bool


class CurveSampleModel(BaseModel):
    x: float
    survival_raw: float
    survival_fitted: float


class CureRateReport(BaseModel):
    """Everything one analyze run produces"""
    schema_version: str = SCHEMA_VERSION
    config: Dict[str, Any]
    n_writeoff: int
    transition_matrix: List[List[float]]
    observation_counts: Optional[List[float]] = None
    classification: ClassificationModel
    fundamental: Optional[List[List[float]]] = None
    t_inf: Optional[List[List[float]]] = None
    expected_time: Optional[List[float]] = None
    early_warning: List[EarlyWarningModel] = Field(default_factory=list)
    survival_points: Optional[SurvivalPointsModel] = None
    fits: Dict[str, WeibullFitModel] = Field(default_factory=dict)
    primary_fit_method: Optional[str] = None
    cure_rate: Optional[float] = None
    hazard: Optional[HazardModel] = None
    curve_samples: List[CurveSampleModel] = Field(default_factory=list)
    reference_fit: Optional[Dict[str, Any]] = None
    simulation: Optional[Dict[str, Any]] = None
    warnings: List[WarningModel] = Field(default_factory=list)

    def to_json_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @property
    def primary_fit(self) -> Optional[WeibullFitModel]:
        if self.primary_fit_method is None:
            return None
        return self.fits.get(self.primary_fit_method)


@lru_cache(maxsize=1)
def _validator() -> Draft202012Validator:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        return Draft202012Validator(json.load(f))


def validate_report(data: Dict[str, Any]) -> None:
    """Raise InvariantViolation when a report dict does not match the published schema"""
    errors = sorted(_validator().iter_errors(data), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        location = "/".join(str(p) for p in first.path) or "<root>"
        raise InvariantViolation(f"Report does not match schema at {location}: {first.message}")


def write_report(report: CureRateReport, path: Optional[str] = None) -> str:
    """Validate and serialize a report; writes to path when given and returns the JSON text"""
    data = report.to_json_dict()
    validate_report(data)
    text = json.dumps(data, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        logger.info("✅ Report written to %s", path)
    return text


def load_report(path: str) -> CureRateReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ParseError(f"Report not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"Report {path} is not valid JSON: {e}") from e
    validate_report(data)
    return CureRateReport.model_validate(data)


def require_fit(report: CureRateReport) -> WeibullFitModel:
    """The fitted curve of a report, or MissingPrerequisite when there is none"""
    if report.classification.verdict != "applicable":
        raise MissingPrerequisite("Report has a cyclic verdict; no survival curve was fitted")
    fit = report.primary_fit
    if fit is None or report.survival_points is None:
        raise MissingPrerequisite("Report does not contain a Weibull fit")
    return fit


def load_reference_fit(path: Optional[str]) -> Optional[Dict[str, Any]]:
    """
    Published reference values to display next to the computed fit.
    fixtures/example1_reference.json holds the values printed for the bundled
    Example 1 matrix; the CLI picks it up by default when analysing that fixture.
    """
    if not path:
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            reference = json.load(f)
    except FileNotFoundError as e:
        raise ParseError(f"Reference fit not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"Reference fit {path} is not valid JSON: {e}") from e
    if not isinstance(reference, dict):
        raise ParseError(f"Reference fit {path} must be a JSON object")
    return reference
