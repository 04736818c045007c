"""
Cure Rate Simulation Service
Monte Carlo path simulator over a transition matrix: an independent check on the
absorption probabilities and expected times, and a portfolio projection engine.

Paths are simulated in fixed blocks of BLOCK_SIZE. Each block draws from its own
Philox stream keyed by (seed, stream, block), so the aggregates do not depend on
how many worker threads run the blocks.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.absorption_service import AbsorptionResult, absorb_matrix, limit_matrix
from services.chain_service import TransitionMatrix, classify
from services.config_service import SimConfig
from services.diagnostics import Diagnostic, warn
from services.errors import InvariantViolation, SingularBlock

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
COMPOSITION_STREAM = 0
TRACE_COLUMNS = ["path_id", "step", "state"]


@dataclass(frozen=True)
class StartStateEstimate:
    """Monte Carlo estimates for paths starting in one state"""
    start_state: int
    n_paths: int
    cured: float
    lost: float
    unabsorbed: float
    se_cured: float
    se_lost: float
    se_unabsorbed: float
    mean_steps: float
    se_steps: float
    mean_visits: np.ndarray
    se_visits: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_state": self.start_state,
            "n_paths": self.n_paths,
            "cured": self.cured,
            "lost": self.lost,
            "unabsorbed": self.unabsorbed,
            "se_cured": self.se_cured,
            "se_lost": self.se_lost,
            "se_unabsorbed": self.se_unabsorbed,
            "mean_steps": _json_float(self.mean_steps),
            "se_steps": _json_float(self.se_steps),
            "mean_visits": [float(v) for v in self.mean_visits],
            "se_visits": [float(v) for v in self.se_visits],
        }


@dataclass(frozen=True)
class SimResult:
    seed: int
    n_paths: int
    max_steps: int
    per_start: Tuple[StartStateEstimate, ...]
    warnings: Tuple[Diagnostic, ...] = ()
    trace: Tuple[Tuple[int, int, int], ...] = field(default_factory=tuple)

    def for_state(self, state: int) -> StartStateEstimate:
        for estimate in self.per_start:
            if estimate.start_state == state:
                return estimate
        raise KeyError(f"No simulated paths started in state {state}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "n_paths": self.n_paths,
            "max_steps": self.max_steps,
            "per_start": [e.to_dict() for e in self.per_start],
            "warnings": [w.to_dict() for w in self.warnings],
        }

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.trace), columns=TRACE_COLUMNS)


@dataclass(frozen=True)
class PortfolioProjection:
    """Expected state occupancy composition . A^n per year, plus the absorbing limit"""
    yearly: np.ndarray
    limit: Optional[np.ndarray]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "yearly": self.yearly.tolist(),
            "limit": None if self.limit is None else self.limit.tolist(),
        }


@dataclass
class _Totals:
    """Integer sums per start state; adding blocks in any order gives the same totals"""
    paths: np.ndarray
    cured: np.ndarray
    lost: np.ndarray
    unabsorbed: np.ndarray
    steps: np.ndarray
    steps_sq: np.ndarray
    visits: np.ndarray
    visits_sq: np.ndarray

    @classmethod
    def zeros(cls, n_states: int) -> "_Totals":
        n_transitive = n_states - 2
        return cls(*(np.zeros(n_states, dtype=np.int64) for _ in range(6)),
                   np.zeros((n_states, n_transitive), dtype=np.int64),
                   np.zeros((n_states, n_transitive), dtype=np.int64))

    def add(self, other: "_Totals") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


def _json_float(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, block))))


def _cumulative_rows(A: TransitionMatrix) -> np.ndarray:
    cum = np.cumsum(A.entries, axis=1)
    return cum / cum[:, -1:]


def _simulate_block(
    cum: np.ndarray,
    starts: Optional[np.ndarray],
    composition_cdf: Optional[np.ndarray],
    size: int,
    rng: np.random.Generator,
    max_steps: int,
    path_offset: int,
    trace_limit: int,
    path_base: int = 0,
) -> Tuple[_Totals, List[Tuple[int, int, int]]]:
    n_states = cum.shape[0]
    if starts is None:
        starts = np.searchsorted(composition_cdf, rng.random(size), side="right")
        starts = np.minimum(starts, n_states - 1)
    state = starts.astype(np.int64).copy()
    steps = np.zeros(size, dtype=np.int64)
    visits = np.zeros((size, n_states - 2), dtype=np.int64)
    alive = state >= 2

    traced = np.flatnonzero(np.arange(size) + path_offset < trace_limit)
    # ids run on across streams; the trace limit counts paths within this stream
    first_id = path_base + path_offset
    trace = [(int(first_id + p), 0, int(state[p])) for p in traced]

    for step in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        current = state[idx]
        visits[idx, current - 2] += 1
        u = rng.random(idx.size)
        # inverse CDF: first column whose cumulative probability exceeds u
        nxt = np.minimum((cum[current] <= u[:, None]).sum(axis=1), n_states - 1)
        steps[idx] += 1
        state[idx] = nxt
        alive[idx] = nxt >= 2
        if traced.size:
            moved = np.intersect1d(traced, idx)
            trace.extend((int(first_id + p), step + 1, int(state[p])) for p in moved)

    totals = _Totals.zeros(n_states)
    absorbed = ~alive
    np.add.at(totals.paths, starts, 1)
    np.add.at(totals.cured, starts, (state == 0) & absorbed)
    np.add.at(totals.lost, starts, (state == 1) & absorbed)
    np.add.at(totals.unabsorbed, starts, alive)
    np.add.at(totals.steps, starts[absorbed], steps[absorbed])
    np.add.at(totals.steps_sq, starts[absorbed], steps[absorbed] ** 2)
    np.add.at(totals.visits, starts, visits)
    np.add.at(totals.visits_sq, starts, visits ** 2)
    return totals, trace


def _run_stream(
    A: TransitionMatrix,
    cfg: SimConfig,
    stream: int,
    start: Optional[int],
    composition: Optional[np.ndarray],
    path_base: int = 0,
) -> Tuple[_Totals, List[Tuple[int, int, int]]]:
    cum = _cumulative_rows(A)
    composition_cdf = None
    if composition is not None:
        composition_cdf = np.cumsum(composition / composition.sum())
    n_blocks = -(-cfg.n_paths // BLOCK_SIZE)

    def run_block(block: int):
        size = min(BLOCK_SIZE, cfg.n_paths - block * BLOCK_SIZE)
        starts = None if start is None else np.full(size, start, dtype=np.int64)
        return _simulate_block(
            cum, starts, composition_cdf, size, _block_rng(cfg.seed, stream, block),
            cfg.max_steps, block * BLOCK_SIZE, cfg.trace_paths, path_base,
        )

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        outcomes = list(pool.map(run_block, range(n_blocks)))

    totals = _Totals.zeros(A.n_states)
    trace: List[Tuple[int, int, int]] = []
    for block_totals, block_trace in outcomes:
        totals.add(block_totals)
        trace.extend(block_trace)
    return totals, trace


def _estimate(state: int, totals: _Totals) -> StartStateEstimate:
    n = int(totals.paths[state])
    cured, lost, unabsorbed = (int(totals.cured[state]), int(totals.lost[state]), int(totals.unabsorbed[state]))

    def proportion(count: int) -> Tuple[float, float]:
        p = count / n
        return p, float(np.sqrt(p * (1.0 - p) / n))

    p_cured, se_cured = proportion(cured)
    p_lost, se_lost = proportion(lost)
    p_unabsorbed, se_unabsorbed = proportion(unabsorbed)

    absorbed = n - unabsorbed
    if absorbed:
        mean_steps = totals.steps[state] / absorbed
        var_steps = (totals.steps_sq[state] - absorbed * mean_steps**2) / max(absorbed - 1, 1)
        se_steps = float(np.sqrt(max(var_steps, 0.0) / absorbed))
    else:
        mean_steps, se_steps = float("nan"), float("nan")

    mean_visits = totals.visits[state] / n
    var_visits = (totals.visits_sq[state] - n * mean_visits**2) / max(n - 1, 1)
    se_visits = np.sqrt(np.clip(var_visits, 0.0, None) / n)
    return StartStateEstimate(
        start_state=state,
        n_paths=n,
        cured=p_cured,
        lost=p_lost,
        unabsorbed=p_unabsorbed,
        se_cured=se_cured,
        se_lost=se_lost,
        se_unabsorbed=se_unabsorbed,
        mean_steps=float(mean_steps),
        se_steps=se_steps,
        mean_visits=mean_visits,
        se_visits=se_visits,
    )


def simulate_paths(A: TransitionMatrix, cfg: SimConfig) -> SimResult:
    """
    Simulate independent trajectories by inverse-CDF sampling per row

    Args:
        A: Transition matrix
        cfg: Seed, path count, step cap, start state (one state, a composition
            vector over all states, or None for every transitive state), threads

    Returns:
        SimResult with per-start-state fractions, mean steps and visit counts
    """
    n = A.n_states
    runs: List[Tuple[int, Optional[int], Optional[np.ndarray]]] = []
    if cfg.start_state is None:
        runs = [(state + 1, state, None) for state in range(2, n)]
    elif isinstance(cfg.start_state, tuple):
        composition = np.asarray(cfg.start_state, dtype=float)
        if composition.shape != (n,) or composition.sum() <= 0:
            raise InvariantViolation(f"Composition must have {n} non-negative weights with positive total")
        runs = [(COMPOSITION_STREAM, None, composition)]
    else:
        if not 0 <= cfg.start_state < n:
            raise InvariantViolation(f"Start state {cfg.start_state} outside 0..{n - 1}")
        runs = [(cfg.start_state + 1, cfg.start_state, None)]

    estimates: List[StartStateEstimate] = []
    trace: List[Tuple[int, int, int]] = []
    for run_index, (stream, start, composition) in enumerate(runs):
        totals, run_trace = _run_stream(A, cfg, stream, start, composition, run_index * cfg.n_paths)
        estimates.extend(_estimate(int(state), totals) for state in np.flatnonzero(totals.paths))
        trace.extend(run_trace)

    diagnostics: List[Diagnostic] = []
    for estimate in estimates:
        if estimate.unabsorbed > 0:
            diagnostics.append(warn(
                "UNABSORBED_MASS",
                f"{estimate.unabsorbed:.4%} of paths from S{estimate.start_state} "
                f"were not absorbed within {cfg.max_steps} steps",
            ))
    logger.info("✅ Simulated %d paths per run over %d runs (seed %d)", cfg.n_paths, len(runs), cfg.seed)
    return SimResult(
        seed=cfg.seed,
        n_paths=cfg.n_paths,
        max_steps=cfg.max_steps,
        per_start=tuple(estimates),
        warnings=tuple(diagnostics),
        trace=tuple(trace),
    )


def compare_with_analytic(sim: SimResult, result: AbsorptionResult) -> List[Dict[str, Any]]:
    """Analytic-vs-simulated cure probability and time to absorption per transitive start state"""
    rows = []
    for estimate in sim.per_start:
        if estimate.start_state < 2:
            continue
        r = estimate.start_state - 2
        analytic_cure = float(result.t_inf[r, 0])
        analytic_time = float(result.expected_time[r])
        rows.append({
            "start_state": estimate.start_state,
            "analytic_cure": analytic_cure,
            "simulated_cure": estimate.cured,
            "cure_delta": estimate.cured - analytic_cure,
            "cure_z": _z_score(estimate.cured - analytic_cure, estimate.se_cured),
            "analytic_time": analytic_time,
            "simulated_time": _json_float(estimate.mean_steps),
            "time_delta": _json_float(estimate.mean_steps - analytic_time),
            "time_z": _z_score(estimate.mean_steps - analytic_time, estimate.se_steps),
        })
    return rows


def _z_score(delta: float, se: float) -> Optional[float]:
    if not np.isfinite(delta) or not np.isfinite(se):
        return None
    if se == 0:
        return 0.0 if delta == 0 else None
    return float(delta / se)


def simulate_portfolio(
    A: TransitionMatrix,
    composition: Sequence[float],
    horizon: int,
    absorption: Optional[AbsorptionResult] = None,
) -> PortfolioProjection:
    """
    Deterministic expected occupancy composition . A^n for n = 1..horizon

    The limit composition . A_inf is included when the chain is applicable.
    """
    weights = np.asarray(composition, dtype=float)
    if weights.shape != (A.n_states,):
        raise InvariantViolation(f"Composition must have {A.n_states} entries")
    if np.any(weights < 0):
        raise InvariantViolation("Composition weights must be non-negative")
    if horizon < 1:
        raise InvariantViolation("Horizon must be at least one year")

    yearly = np.zeros((horizon, A.n_states))
    occupancy = weights
    for year in range(horizon):
        occupancy = occupancy @ A.entries
        yearly[year] = occupancy

    limit = None
    if absorption is None and classify(A, A.cfg.edge_threshold).applicable:
        try:
            absorption = absorb_matrix(A)
        except SingularBlock:
            absorption = None
    if absorption is not None:
        limit = weights @ limit_matrix(A, absorption)
    return PortfolioProjection(yearly=yearly, limit=limit)
