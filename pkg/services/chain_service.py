"""
Cure Rate Chain Service
Estimates the row-stochastic transition matrix, splits it into the canonical
[[I, 0], [T, S]] block form and classifies states into communication classes
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from services.config_service import ChainConfig
from services.diagnostics import Diagnostic, warn
from services.errors import EmptyInput, InvariantViolation, ParseError, ZeroRow
from services.loan_tape_service import ObservedTransition, State, state_label

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-9
FILE_ROW_TOLERANCE = 5e-3
CSV_FLOAT_FORMAT = "%.6f"

APPLICABLE = "applicable"
CYCLIC = "cyclic"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TransitionMatrix:
    """(N+2)x(N+2) row-stochastic matrix in canonical state order"""
    entries: np.ndarray
    cfg: ChainConfig
    observation_counts: Optional[np.ndarray] = None
    warnings: Tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        entries = _frozen(self.entries)
        object.__setattr__(self, "entries", entries)
        if self.observation_counts is not None:
            object.__setattr__(self, "observation_counts", _frozen(self.observation_counts))
        n = self.cfg.n_states
        if entries.shape != (n, n):
            raise InvariantViolation(f"Transition matrix must be {n}x{n}, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise InvariantViolation("Transition matrix contains non-finite entries")
        if entries.min() < 0 or entries.max() > 1 + ROW_TOLERANCE:
            raise InvariantViolation("Transition matrix entries must lie in [0, 1]")
        row_sums = entries.sum(axis=1)
        bad = np.flatnonzero(np.abs(row_sums - 1.0) > ROW_TOLERANCE)
        if bad.size:
            raise InvariantViolation(
                f"Rows {bad.tolist()} do not sum to 1 (sums {row_sums[bad].round(6).tolist()})"
            )
        identity = np.eye(n)
        for state in (State.CURED, State.LOST):
            if not np.allclose(entries[state], identity[state], atol=ROW_TOLERANCE):
                raise InvariantViolation(f"Row {int(state)} must be the unit vector of an absorbing state")
        if np.any(entries[State.FORBORNE, 2:] > ROW_TOLERANCE):
            raise InvariantViolation("The forborne row may only move to cured or lost")

    @property
    def n_states(self) -> int:
        return self.cfg.n_states


@dataclass(frozen=True)
class Blocks:
    """T: transitive -> absorbing (N x 2); S: transitive -> transitive (N x N)"""
    T: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "T", _frozen(self.T))
        object.__setattr__(self, "S", _frozen(self.S))


@dataclass(frozen=True)
class CommunicationClass:
    members: Tuple[int, ...]
    closed: bool

    def labels(self) -> List[str]:
        return [state_label(s) for s in self.members]


@dataclass(frozen=True)
class Classification:
    classes: Tuple[CommunicationClass, ...]
    verdict: str
    offending_classes: Tuple[CommunicationClass, ...] = field(default_factory=tuple)
    warnings: Tuple[Diagnostic, ...] = ()

    @property
    def applicable(self) -> bool:
        return self.verdict == APPLICABLE


def estimate(transitions: Iterable[ObservedTransition], cfg: ChainConfig) -> TransitionMatrix:
    """
    Ratio estimator of the transition matrix

    Args:
        transitions: Observed one-year migrations
        cfg: Chain configuration (N, zero_row_policy)

    Returns:
        TransitionMatrix with per-row observation counts and any imputation warnings
    """
    n = cfg.n_states
    weights = np.zeros((n, n))
    counts = np.zeros(n)
    seen = 0
    for t in transitions:
        if t.from_state >= n or t.to_state >= n:
            raise InvariantViolation(
                f"Loan {t.loan_id}: state outside 0..{n - 1} ({t.from_state} -> {t.to_state})"
            )
        if t.from_state == State.FORBORNE and t.to_state >= State.FORBORNE:
            raise InvariantViolation(f"Loan {t.loan_id}: forborne loans resolve only to cured or lost")
        weights[t.from_state, t.to_state] += t.weight
        counts[t.from_state] += 1
        seen += 1
    if seen == 0:
        raise EmptyInput("No observed transitions to estimate from")

    entries = np.zeros((n, n))
    entries[State.CURED, State.CURED] = 1.0
    entries[State.LOST, State.LOST] = 1.0
    diagnostics: List[Diagnostic] = []
    for state in range(2, n):
        total = weights[state].sum()
        if total > 0:
            entries[state] = weights[state] / total
            continue
        if cfg.zero_row_policy == "error":
            raise ZeroRow(state, state_label(state))
        entries[state, State.LOST] = 1.0
        diagnostics.append(warn(
            "ZERO_ROW_IMPUTED",
            f"{state_label(state)} has no observed exits; row set to lost with probability 1",
        ))

    # exact row sums after the ratio estimate
    entries = entries / entries.sum(axis=1, keepdims=True)
    logger.info("✅ Estimated %dx%d transition matrix from %d observations", n, n, seen)
    return TransitionMatrix(entries, cfg, observation_counts=counts, warnings=tuple(diagnostics))


def to_blocks(A: TransitionMatrix) -> Blocks:
    """Exact extraction of the T and S blocks, no renormalization"""
    return Blocks(T=A.entries[2:, :2], S=A.entries[2:, 2:])


def transition_graph(A: TransitionMatrix, edge_threshold: float = 0.0) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(A.n_states))
    rows, cols = np.nonzero(A.entries > edge_threshold)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


def classify(A: TransitionMatrix, edge_threshold: float = 0.0) -> Classification:
    """
    Split the states into communication classes and decide applicability

    A class is closed when no edge leaves it; any closed class other than
    {S0} and {S1} makes the chain cyclic.
    """
    graph = transition_graph(A, edge_threshold)
    condensed = nx.condensation(graph)
    classes = []
    for node in condensed.nodes:
        members = tuple(sorted(condensed.nodes[node]["members"]))
        classes.append(CommunicationClass(members=members, closed=condensed.out_degree(node) == 0))
    classes.sort(key=lambda c: c.members[0])

    absorbing = {(int(State.CURED),), (int(State.LOST),)}
    offending = tuple(c for c in classes if c.closed and c.members not in absorbing)
    verdict = CYCLIC if offending else APPLICABLE
    diagnostics = tuple(
        warn("CYCLIC_CLASS", f"Closed recurrent class among transitive states: {c.labels()}")
        for c in offending
    )
    if not offending:
        logger.info("✅ Chain is applicable: every transitive state is transient")
    return Classification(
        classes=tuple(classes), verdict=verdict, offending_classes=offending, warnings=diagnostics,
    )


def mixes_performing(cls: CommunicationClass, cfg: ChainConfig) -> bool:
    """True when a class holds both performing and non-performing past-due states"""
    months = [s - 2 for s in cls.members if s >= 3]
    return any(m < cfg.npl_threshold for m in months) and any(m >= cfg.npl_threshold for m in months)


# --- matrix files ---

def read_matrix(path: str, cfg: ChainConfig) -> TransitionMatrix:
    """
    Read a square matrix CSV in canonical order (no header)

    Rows within 5e-3 of summing to 1 are renormalized with a warning; the
    matrix size defines N.
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=float)
    except FileNotFoundError as e:
        raise ParseError(f"Matrix file not found: {path}") from e
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Could not parse matrix file {path}: {e}") from e
    return matrix_from_array(frame.to_numpy(), cfg, source=path)


def matrix_from_array(raw, cfg: ChainConfig, source: str = "matrix") -> TransitionMatrix:
    entries = np.asarray(raw, dtype=float)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise InvariantViolation(f"{source} must be square, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise InvariantViolation(f"{source} contains missing or non-finite entries")
    if entries.min() < 0:
        raise InvariantViolation(f"{source} contains negative entries")

    diagnostics: List[Diagnostic] = []
    n = entries.shape[0]
    if n != cfg.n_states:
        try:
            cfg = replace(cfg, n_writeoff=n - 2)
        except Exception as e:
            raise InvariantViolation(f"{source}: {n}x{n} is not a valid chain size ({e})") from e
        diagnostics.append(warn(
            "N_FROM_MATRIX", f"n_writeoff set to {n - 2} from the {n}x{n} matrix in {source}",
        ))

    row_sums = entries.sum(axis=1)
    off = np.abs(row_sums - 1.0)
    bad = np.flatnonzero(off > FILE_ROW_TOLERANCE)
    if bad.size:
        raise InvariantViolation(
            f"{source}: rows {bad.tolist()} sum to {row_sums[bad].round(6).tolist()}, "
            f"outside the {FILE_ROW_TOLERANCE} tolerance"
        )
    adjusted = np.flatnonzero(off > 0)
    if adjusted.size:
        entries = entries / row_sums[:, None]
        if np.any(off[adjusted] > ROW_TOLERANCE):
            diagnostics.append(warn(
                "ROW_RENORMALIZED",
                f"Rows {adjusted.tolist()} renormalized (max deviation {off.max():.2e})",
            ))
    return TransitionMatrix(entries, cfg, warnings=tuple(diagnostics))


def write_matrix(matrix: np.ndarray, path: str) -> None:
    """Write a matrix as headerless CSV with 6-decimal fixed formatting"""
    pd.DataFrame(np.asarray(matrix, dtype=float)).to_csv(
        path, header=False, index=False, float_format=CSV_FLOAT_FORMAT
    )
