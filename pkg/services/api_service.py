"""
Cure Rate API Service
Main service that orchestrates the cure-rate pipeline for the CLI and the HTTP API:
estimate -> classify -> absorb -> survival points -> Weibull fit -> report
"""

import logging
import os
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.absorption_service import AbsorptionResult, absorb_matrix, early_warning_times
from services.chain_service import (
    Classification,
    CommunicationClass,
    TransitionMatrix,
    classify,
    estimate,
    mixes_performing,
    write_matrix,
)
from services.config_service import ChainConfig, RunConfig
from services.diagnostics import Diagnostic, as_dicts, warn
from services.errors import FitError
from services.loan_tape_service import (
    LoanSnapshot,
    ObservedTransition,
    pair_snapshots_with_diagnostics,
)
from services.report_service import (
    ClassificationModel,
    CommunicationClassModel,
    CureRateReport,
    CurveSampleModel,
    EarlyWarningModel,
    HazardModel,
    SurvivalPointsModel,
    WarningModel,
    WeibullFitModel,
    load_reference_fit,
    require_fit,
)
from services.simulation_service import compare_with_analytic, simulate_paths, simulate_portfolio
from services.survival_service import (
    SurvivalPoints,
    WeibullFit,
    build_points,
    check_conditions,
    cure_rate,
    curve_frame,
    default_hazard_grid,
    fit_weibull,
    hazard_profile,
    points_from_dict,
    survival_at,
)

logger = logging.getLogger(__name__)

HAZARD_SIGNIFICANCE = 0.05


def _warning_models(diagnostics: Sequence[Diagnostic]) -> List[WarningModel]:
    return [WarningModel(code=d.code, message=d.message) for d in diagnostics]


def _class_model(cls: CommunicationClass, cfg: ChainConfig) -> CommunicationClassModel:
    return CommunicationClassModel(
        members=list(cls.members),
        labels=cls.labels(),
        closed=cls.closed,
        mixes_performing=mixes_performing(cls, cfg),
    )


def _classification_model(classification: Classification, cfg: ChainConfig) -> ClassificationModel:
    return ClassificationModel(
        verdict=classification.verdict,
        classes=[_class_model(c, cfg) for c in classification.classes],
        offending_classes=[_class_model(c, cfg) for c in classification.offending_classes],
    )


class CureRateAPIService:
    """Main pipeline service shared by the command line and the HTTP router"""

    def estimate_from_snapshots(
        self,
        prev: List[LoanSnapshot],
        curr: List[LoanSnapshot],
        run: RunConfig,
    ) -> TransitionMatrix:
        transitions, diagnostics = pair_snapshots_with_diagnostics(prev, curr, run.chain)
        matrix = estimate(transitions, run.chain)
        return replace(matrix, warnings=tuple(diagnostics) + matrix.warnings)

    def estimate_from_transitions(self, transitions: List[ObservedTransition], run: RunConfig) -> TransitionMatrix:
        return estimate(transitions, run.chain)

    def counts_summary(self, matrix: TransitionMatrix) -> Dict[str, Any]:
        """Observation counts per row, the JSON sidecar of an estimated matrix"""
        counts = matrix.observation_counts
        rows = {} if counts is None else {
            f"S{state}": int(counts[state]) for state in range(2, matrix.n_states)
        }
        return {
            "n_writeoff": matrix.cfg.n_writeoff,
            "n_states": matrix.n_states,
            "n_transitions": int(sum(rows.values())),
            "observation_counts": rows,
            "warnings": as_dicts(matrix.warnings),
        }

    def _fits(
        self,
        points: SurvivalPoints,
        run: RunConfig,
        diagnostics: List[Diagnostic],
    ) -> Tuple[Dict[str, WeibullFit], Optional[str]]:
        methods = ("loglog", "nls") if run.analysis.fit_method == "both" else (run.analysis.fit_method,)
        fits: Dict[str, WeibullFit] = {}
        for method in methods:
            try:
                fit = fit_weibull(points, method=method, clip_epsilon=run.analysis.clip_epsilon)
            except FitError as e:
                diagnostics.append(warn("FIT_FAILED", f"{method} fit failed: {e}"))
                continue
            fits[fit.method] = fit
        primary = next(iter(fits), None)
        return fits, primary

    def analyze(self, matrix: TransitionMatrix, run: RunConfig, include_simulation: bool = False) -> CureRateReport:
        """
        Run the full pipeline on a transition matrix

        Args:
            matrix: Validated transition matrix; its size defines N
            run: Run configuration (echoed into the report)
            include_simulation: Add the Monte Carlo cross-check to the report

        Returns:
            CureRateReport; a cyclic chain stops after classification with no cure rate
        """
        cfg = matrix.cfg
        run = replace(run, chain=cfg)
        diagnostics: List[Diagnostic] = list(matrix.warnings)
        classification = classify(matrix, cfg.edge_threshold)
        diagnostics.extend(classification.warnings)

        base: Dict[str, Any] = {
            "config": run.to_dict(),
            "n_writeoff": cfg.n_writeoff,
            "transition_matrix": matrix.entries.tolist(),
            "observation_counts": (
                None if matrix.observation_counts is None else matrix.observation_counts.tolist()
            ),
            "classification": _classification_model(classification, cfg),
            "reference_fit": load_reference_fit(run.analysis.reference_fit_path),
        }
        if not classification.applicable:
            logger.warning("⚠️ Cyclic chain: cure rate is not computed")
            return CureRateReport(**base, warnings=_warning_models(diagnostics))

        absorption = absorb_matrix(matrix)
        early_warning = self._early_warning(absorption, run, diagnostics)
        points = build_points(absorption, cfg)
        diagnostics.extend(check_conditions(points))
        fits, primary = self._fits(points, run, diagnostics)

        report: Dict[str, Any] = {
            **base,
            "fundamental": absorption.fundamental.tolist(),
            "t_inf": absorption.t_inf.tolist(),
            "expected_time": absorption.expected_time.tolist(),
            "early_warning": early_warning,
            "survival_points": SurvivalPointsModel(x=list(points.x), s=list(points.s), delta=points.delta),
            "fits": {name: WeibullFitModel(**fit.to_dict()) for name, fit in fits.items()},
            "primary_fit_method": primary,
        }
        if primary is not None:
            fit = fits[primary]
            report["cure_rate"] = cure_rate(fit, cfg)
            profile = hazard_profile(fit, default_hazard_grid(cfg.n_writeoff, run.analysis.hazard_grid_step))
            report["hazard"] = HazardModel(**profile.to_dict())
            if fit.p_one_sided_k_le_1 >= HAZARD_SIGNIFICANCE:
                diagnostics.append(warn(
                    "HAZARD_NOT_INCREASING",
                    f"k = {fit.k:.4f} is not significantly above 1 (one-sided p = {fit.p_one_sided_k_le_1:.4f})",
                ))
            fitted = survival_at(fit, np.asarray(points.x))
            report["curve_samples"] = [
                CurveSampleModel(x=x, survival_raw=s, survival_fitted=float(f))
                for x, s, f in zip(points.x, points.s, fitted)
            ]
            logger.info("✅ Cure rate S(%d) = %.4f", cfg.npl_threshold, report["cure_rate"])

        if include_simulation:
            sim = simulate_paths(matrix, run.sim)
            diagnostics.extend(sim.warnings)
            report["simulation"] = {**sim.to_dict(), "comparison": compare_with_analytic(sim, absorption)}

        return CureRateReport(**report, warnings=_warning_models(diagnostics))

    def _early_warning(
        self,
        absorption: AbsorptionResult,
        run: RunConfig,
        diagnostics: List[Diagnostic],
    ) -> List[EarlyWarningModel]:
        n_states = run.chain.n_states
        times = []
        for from_state, to_state in run.analysis.early_warning_pairs:
            if not (2 <= from_state < n_states and 2 <= to_state < n_states):
                diagnostics.append(warn(
                    "EARLY_WARNING_SKIPPED",
                    f"L({from_state},{to_state}) skipped: states must lie in 2..{n_states - 1}",
                ))
                continue
            times.append(EarlyWarningModel(
                from_state=from_state,
                to_state=to_state,
                expected_time=early_warning_times(absorption, from_state, to_state),
            ))
        return times

    def simulate(
        self,
        matrix: TransitionMatrix,
        run: RunConfig,
        horizon: Optional[int] = None,
        composition: Optional[Sequence[float]] = None,
    ) -> Tuple[Dict[str, Any], pd.DataFrame]:
        """
        Monte Carlo run with analytic deltas when the chain is applicable

        Returns:
            The JSON-ready summary and the per-path trace frame (empty unless trace_paths > 0)
        """
        cfg = matrix.cfg
        run = replace(run, chain=cfg)
        classification = classify(matrix, cfg.edge_threshold)
        sim = simulate_paths(matrix, run.sim)
        diagnostics = list(matrix.warnings) + list(classification.warnings) + list(sim.warnings)

        summary: Dict[str, Any] = {
            "config": run.to_dict(),
            "verdict": classification.verdict,
            "simulation": sim.to_dict(),
            "comparison": None,
            "projection": None,
        }
        absorption = None
        if classification.applicable:
            absorption = absorb_matrix(matrix)
            summary["comparison"] = compare_with_analytic(sim, absorption)
        if horizon is not None:
            if composition is None:
                raise ValueError("A portfolio projection needs a composition")
            summary["projection"] = simulate_portfolio(matrix, composition, horizon, absorption).to_dict()
        summary["warnings"] = as_dicts(diagnostics)
        return summary, sim.trace_frame()

    def curve(self, report: CureRateReport) -> pd.DataFrame:
        """Raw-vs-fitted curve of a saved report"""
        fit_model = require_fit(report)
        fit = WeibullFit.from_dict(fit_model.model_dump())
        points = points_from_dict(report.survival_points.model_dump())
        return curve_frame(points, fit)

    def export_matrices(self, matrix: TransitionMatrix, directory: str) -> List[str]:
        """Write transition.csv and, for an applicable chain, fundamental.csv and t_inf.csv"""
        os.makedirs(directory, exist_ok=True)
        written = [os.path.join(directory, "transition.csv")]
        write_matrix(matrix.entries, written[0])
        if classify(matrix, matrix.cfg.edge_threshold).applicable:
            absorption = absorb_matrix(matrix)
            for name, values in (("fundamental.csv", absorption.fundamental), ("t_inf.csv", absorption.t_inf)):
                path = os.path.join(directory, name)
                write_matrix(values, path)
                written.append(path)
        logger.info("✅ Exported %d matrices to %s", len(written), directory)
        return written

    def get_system_info(self) -> Dict[str, Any]:
        return {
            "service": "cure-rate",
            "pipeline": ["estimate", "classify", "absorb", "survival points", "weibull fit", "report"],
            "fit_methods": ["loglog", "nls", "both"],
        }


# Global instance
curerate_api = CureRateAPIService()


def get_api_service() -> CureRateAPIService:
    """Get the global cure-rate API service instance"""
    return curerate_api
