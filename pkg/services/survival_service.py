"""
Cure Rate Survival Service
Smooths the raw Markov cure probabilities with a best-fitting Weibull survival
curve S(x) = exp(-(x / lambda)^k) and reads the portfolio cure rate off it
"""

import logging
import warnings
from dataclasses import dataclass, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import OptimizeWarning, curve_fit

from services.absorption_service import AbsorptionResult
from services.config_service import ChainConfig
from services.diagnostics import Diagnostic, warn
from services.errors import DegenerateDesign, NonConvergence, ParseError, TooFewPoints

logger = logging.getLogger(__name__)

LOGLOG = "loglog_ols"
NLS = "nls"
METHOD_ALIASES = {"loglog": LOGLOG, LOGLOG: LOGLOG, NLS: NLS}

NLS_MAX_ITERATIONS = 200
NLS_STEP_TOLERANCE = 1e-10
CURVE_STEP = 0.1
CSV_FLOAT_FORMAT = "%.6f"
CURVE_COLUMNS = ["x", "survival_raw", "survival_fitted", "hazard"]


@dataclass(frozen=True)
class SurvivalPoints:
    """Ordered (x, s) observations from (0, 1) to (N, 0)"""
    x: Tuple[float, ...]
    s: Tuple[float, ...]
    # abscissa of the forborne point, when present
    delta: Optional[float] = None

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        s = tuple(float(v) for v in self.s)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        if len(x) != len(s) or len(x) < 2:
            raise ValueError("Survival points need matching x and s with at least two entries")
        if np.any(np.diff(x) <= 0):
            raise ValueError("Survival point abscissae must be strictly increasing")
        if x[0] != 0.0 or s[0] != 1.0:
            raise ValueError("The first survival point must be (0, 1)")
        if s[-1] != 0.0:
            raise ValueError("The last survival point must be (N, 0)")
        if any(not 0.0 <= v <= 1.0 for v in s):
            raise ValueError("Survival values must lie in [0, 1]")

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[float, float]], delta: Optional[float] = None) -> "SurvivalPoints":
        xs, ss = zip(*pairs)
        return cls(x=tuple(xs), s=tuple(ss), delta=delta)

    def pairs(self) -> List[Tuple[float, float]]:
        return list(zip(self.x, self.s))


@dataclass(frozen=True)
class WeibullFit:
    lambda_: float
    k: float
    se_lambda: float
    se_k: float
    t_lambda: float
    t_k: float
    r_squared: float
    p_one_sided_k_le_1: float
    df: int
    n_points_used: int
    method: str
    # "loglog" for the transformed regression, "survival" for nls
    r_squared_scale: str = "loglog"

    def __post_init__(self):
        if not (self.lambda_ > 0 and self.k > 0):
            raise DegenerateDesign(f"Fitted parameters must be positive (lambda={self.lambda_}, k={self.k})")

    def to_dict(self) -> Dict[str, Any]:
        return {key: _finite_or_none(value) for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WeibullFit":
        try:
            values = {key: data[key] for key in cls.__dataclass_fields__}
        except KeyError as e:
            raise ParseError(f"Weibull fit is missing field {e}") from e
        # non-finite statistics are serialized as null
        values = {key: float("inf") if value is None else value for key, value in values.items()}
        return cls(**values)


@dataclass(frozen=True)
class HazardProfile:
    x: Tuple[float, ...]
    h: Tuple[float, ...]
    monotone_increasing: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"x": list(self.x), "h": list(self.h), "monotone_increasing": self.monotone_increasing}


def _finite_or_none(value: Any) -> Any:
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def build_points(result: AbsorptionResult, cfg: ChainConfig) -> SurvivalPoints:
    """(0, 1), (delta, p_forborne), (m, p_m) for m = 1..N-1, (N, 0)"""
    cure = np.clip(result.cure_probabilities, 0.0, 1.0)
    pairs = [(0.0, 1.0), (cfg.delta, float(cure[0]))]
    pairs += [(float(m), float(cure[m])) for m in range(1, cfg.n_writeoff)]
    pairs.append((float(cfg.n_writeoff), 0.0))
    return SurvivalPoints.from_pairs(pairs, delta=cfg.delta)


def one_sided_p_value(k: float, se_k: float, df: int) -> float:
    """p-value of H0: k <= 1 from the Student-t statistic (k - 1) / SE(k)"""
    if se_k == 0:
        if k == 1:
            return 0.5
        return 0.0 if k > 1 else 1.0
    return float(stats.t.sf((k - 1.0) / se_k, df))


def _ratio(value: float, se: float) -> float:
    if se == 0:
        return float("inf")
    return value / se


def _loglog_inputs(points: SurvivalPoints, clip_epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(points.x)
    s = np.asarray(points.s)
    if clip_epsilon > 0:
        # endpoints are kept: x = 0 moves to half the forborne abscissa, s is clipped
        anchor = points.delta if points.delta is not None else x[x > 0].min()
        x = np.where(x == 0, anchor / 2.0, x)
        s = np.clip(s, clip_epsilon, 1.0 - clip_epsilon)
        return x, s
    mask = (x > 0) & (s > 0) & (s < 1)
    return x[mask], s[mask]


def _fit_loglog(points: SurvivalPoints, clip_epsilon: float) -> WeibullFit:
    x, s = _loglog_inputs(points, clip_epsilon)
    n = x.size
    if n < 3:
        raise TooFewPoints(f"Need at least 3 usable points for the log-log regression, got {n}")
    u = np.log(x)
    y = np.log(-np.log(s))
    if np.ptp(u) == 0:
        raise DegenerateDesign("All usable abscissae are equal")

    X = np.column_stack([np.ones(n), u])
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    a, k = float(coef[0]), float(coef[1])
    if k <= 0:
        raise DegenerateDesign(f"Log-log slope is non-positive ({k:.4f}); survival is not decreasing")

    resid = y - X @ coef
    ssr = float(resid @ resid)
    df = n - 2
    cov = (ssr / df) * np.linalg.inv(X.T @ X)
    se_k = float(np.sqrt(cov[1, 1]))
    lam = float(np.exp(-a / k))
    # delta method on lambda = exp(-a / k)
    grad = np.array([-lam / k, lam * a / k**2])
    se_lambda = float(np.sqrt(max(grad @ cov @ grad, 0.0)))

    sst = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if sst == 0 else float(np.clip(1.0 - ssr / sst, 0.0, 1.0))
    return WeibullFit(
        lambda_=lam,
        k=k,
        se_lambda=se_lambda,
        se_k=se_k,
        t_lambda=_ratio(lam, se_lambda),
        t_k=_ratio(k, se_k),
        r_squared=r_squared,
        p_one_sided_k_le_1=one_sided_p_value(k, se_k, df),
        df=df,
        n_points_used=n,
        method=LOGLOG,
        r_squared_scale="loglog",
    )


def _log_weibull_survival(x: np.ndarray, log_lambda: float, log_k: float) -> np.ndarray:
    return np.exp(-((x / np.exp(log_lambda)) ** np.exp(log_k)))


def _log_weibull_jacobian(x: np.ndarray, log_lambda: float, log_k: float) -> np.ndarray:
    lam, k = np.exp(log_lambda), np.exp(log_k)
    z = (x / lam) ** k
    m = np.exp(-z)
    return np.column_stack([m * z * k, -m * z * np.log(x / lam) * k])


def _fit_nls(points: SurvivalPoints, clip_epsilon: float) -> WeibullFit:
    start = _fit_loglog(points, clip_epsilon)
    x = np.asarray(points.x)
    s = np.asarray(points.s)
    mask = x > 0
    x, s = x[mask], s[mask]
    n = x.size
    if n < 3:
        raise TooFewPoints(f"Need at least 3 points with x > 0 for nls, got {n}")

    p0 = [np.log(start.lambda_), np.log(start.k)]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            theta, pcov = curve_fit(
                _log_weibull_survival, x, s, p0=p0, jac=_log_weibull_jacobian,
                method="lm", xtol=NLS_STEP_TOLERANCE, maxfev=NLS_MAX_ITERATIONS,
            )
    except RuntimeError as e:
        raise NonConvergence(f"Gauss-Newton did not converge in {NLS_MAX_ITERATIONS} iterations: {e}") from e

    lam, k = float(np.exp(theta[0])), float(np.exp(theta[1]))
    se_theta = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    se_lambda, se_k = float(lam * se_theta[0]), float(k * se_theta[1])
    df = n - 2

    fitted = _log_weibull_survival(x, *theta)
    ssr = float(((s - fitted) ** 2).sum())
    sst = float(((s - s.mean()) ** 2).sum())
    r_squared = 1.0 if sst == 0 else float(np.clip(1.0 - ssr / sst, 0.0, 1.0))
    return WeibullFit(
        lambda_=lam,
        k=k,
        se_lambda=se_lambda,
        se_k=se_k,
        t_lambda=_ratio(lam, se_lambda),
        t_k=_ratio(k, se_k),
        r_squared=r_squared,
        p_one_sided_k_le_1=one_sided_p_value(k, se_k, df),
        df=df,
        n_points_used=n,
        method=NLS,
        r_squared_scale="survival",
    )


def fit_weibull(points: SurvivalPoints, method: str = "loglog", clip_epsilon: float = 0.0) -> WeibullFit:
    """
    Fit the Weibull survival curve

    Args:
        points: Survival points from build_points (or any (0,1)..(N,0) sequence)
        method: "loglog" (OLS on ln(-ln s) against ln x) or "nls" (least squares on s)
        clip_epsilon: 0 excludes the endpoints from the log-log regression;
            > 0 keeps them with s clipped into [eps, 1 - eps]

    Returns:
        WeibullFit with standard errors, t-statistics, R^2 and the one-sided test of k <= 1
    """
    resolved = METHOD_ALIASES.get(method)
    if resolved is None:
        raise ValueError(f"Unknown fit method: {method}")
    fit = _fit_loglog(points, clip_epsilon) if resolved == LOGLOG else _fit_nls(points, clip_epsilon)
    logger.info("✅ Weibull %s fit: lambda=%.4f k=%.4f R2=%.4f", fit.method, fit.lambda_, fit.k, fit.r_squared)
    return fit


def survival_at(fit: WeibullFit, x):
    """exp(-(x / lambda)^k); S(0) = 1"""
    values = np.exp(-((np.asarray(x, dtype=float) / fit.lambda_) ** fit.k))
    return float(values) if values.ndim == 0 else values


def cure_rate(fit: WeibullFit, cfg: ChainConfig) -> float:
    """The portfolio cure rate S(npl_threshold)"""
    return survival_at(fit, cfg.npl_threshold)


def hazard(fit: WeibullFit, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (fit.k / fit.lambda_) * (x / fit.lambda_) ** (fit.k - 1.0)


def default_hazard_grid(n_writeoff: int, step: float = 0.25) -> List[float]:
    count = int(round(n_writeoff / step))
    return [round(step * i, 10) for i in range(1, count + 1)]


def hazard_profile(fit: WeibullFit, grid: Optional[Sequence[float]] = None, n_writeoff: int = 8) -> HazardProfile:
    """h(x) = (k / lambda)(x / lambda)^(k - 1) on a grid of x > 0"""
    grid = list(grid) if grid is not None else default_hazard_grid(n_writeoff)
    if any(x <= 0 for x in grid):
        raise ValueError("Hazard grid must be strictly positive")
    values = hazard(fit, grid)
    return HazardProfile(
        x=tuple(float(x) for x in grid),
        h=tuple(float(v) for v in values),
        monotone_increasing=fit.k > 1,
    )


def check_conditions(points: SurvivalPoints) -> List[Diagnostic]:
    """Warn on each adjacent pair where the raw survival values increase"""
    diagnostics: List[Diagnostic] = []
    pairs = points.pairs()
    for (x0, s0), (x1, s1) in zip(pairs, pairs[1:]):
        if s1 > s0:
            diagnostics.append(warn(
                "NON_MONOTONE_RAW",
                f"Raw cure probability rises from {s0:.4f} at x={x0:g} to {s1:.4f} at x={x1:g}",
            ))
    return diagnostics


# --- curve export ---

def curve_frame(points: SurvivalPoints, fit: WeibullFit, step: float = CURVE_STEP) -> pd.DataFrame:
    """Raw-vs-fitted survival and hazard on a regular grid plus the raw abscissae"""
    n_writeoff = points.x[-1]
    regular = np.round(np.arange(0.0, n_writeoff + step / 2, step), 10)
    grid = np.unique(np.concatenate([regular, np.asarray(points.x)]))
    h = hazard(fit, grid)
    h[~np.isfinite(h)] = np.nan
    return pd.DataFrame({
        "x": grid,
        "survival_raw": np.interp(grid, points.x, points.s),
        "survival_fitted": survival_at(fit, grid),
        "hazard": h,
    }, columns=CURVE_COLUMNS)


def write_curve(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="")
    logger.info("✅ Wrote %d curve rows to %s", len(frame), path)


def points_from_dict(data: Dict[str, Any]) -> SurvivalPoints:
    try:
        return SurvivalPoints(x=tuple(data["x"]), s=tuple(data["s"]), delta=data.get("delta"))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Invalid survival points in report: {e}") from e
