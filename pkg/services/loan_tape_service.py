"""
Cure Rate Loan Tape Service
Maps loan snapshots to chain states and pairs snapshots one year apart
into observed transitions
"""

import logging
from dataclasses import dataclass
from datetime import date
from enum import IntEnum
from typing import Dict, Iterable, List, Tuple

import pandas as pd

from services.config_service import ChainConfig
from services.diagnostics import Diagnostic, warn
from services.errors import DateMismatch, DuplicateLoan, EmptyInput, InvariantViolation, ParseError

logger = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ["loan_id", "as_of", "days_past_due", "forborne", "balance"]
TRANSITION_COLUMNS = ["loan_id", "state_from", "state_to", "weight"]
_FORBORNE_VALUES = {"1": True, "true": True, "0": False, "false": False}

# Canonical state index; PastDue(m) lives at m + 2
StateIndex = int


class State(IntEnum):
    CURED = 0
    LOST = 1
    FORBORNE = 2


def past_due_state(months: int) -> StateIndex:
    return months + 2


def state_label(state: StateIndex) -> str:
    """Human label for a state index, e.g. 'S5 (3 months past due)'"""
    if state == State.CURED:
        return "S0 (cured)"
    if state == State.LOST:
        return "S1 (lost)"
    if state == State.FORBORNE:
        return "S2 (forborne)"
    months = state - 2
    unit = "month" if months == 1 else "months"
    return f"S{state} ({months} {unit} past due)"


@dataclass(frozen=True)
class LoanSnapshot:
    """One loan on one reporting date"""
    loan_id: str
    as_of: date
    days_past_due: int
    forborne: bool
    balance: float

    def __post_init__(self):
        if self.days_past_due < 0:
            raise ParseError(f"Loan {self.loan_id}: days_past_due must be non-negative")
        if self.balance < 0:
            raise ParseError(f"Loan {self.loan_id}: balance must be non-negative")

    def months_past_due(self, cfg: ChainConfig) -> int:
        return self.days_past_due // cfg.month_length_days


@dataclass(frozen=True)
class ObservedTransition:
    """A migration observed over the year before t = 0"""
    loan_id: str
    from_state: StateIndex
    to_state: StateIndex
    weight: float = 1.0

    def __post_init__(self):
        if self.from_state < State.FORBORNE:
            raise InvariantViolation(
                f"Loan {self.loan_id}: absorbing state {self.from_state} cannot emit a transition"
            )
        if self.to_state < 0:
            raise InvariantViolation(f"Loan {self.loan_id}: negative target state")
        if not self.weight > 0:
            raise InvariantViolation(f"Loan {self.loan_id}: weight must be positive")


def assign_state(snapshot: LoanSnapshot, cfg: ChainConfig) -> StateIndex:
    """Map a snapshot to its chain state from whole months past due and the forborne flag"""
    m = snapshot.months_past_due(cfg)
    if snapshot.forborne and m < cfg.npl_threshold:
        return State.FORBORNE
    if m == 0:
        return State.CURED
    if m >= cfg.n_writeoff:
        return State.LOST
    return past_due_state(m)


def _single_date(snapshots: List[LoanSnapshot], name: str) -> date:
    dates = {s.as_of for s in snapshots}
    if len(dates) != 1:
        raise ParseError(f"{name} snapshot must carry exactly one as_of date, found {sorted(dates)}")
    return dates.pop()


def _index_by_loan(snapshots: Iterable[LoanSnapshot], name: str) -> Dict[str, LoanSnapshot]:
    index: Dict[str, LoanSnapshot] = {}
    for snapshot in snapshots:
        if snapshot.loan_id in index:
            raise DuplicateLoan(f"Duplicate loan {snapshot.loan_id} in {name} snapshot")
        index[snapshot.loan_id] = snapshot
    return index


def check_one_year_apart(prev_date: date, curr_date: date, cfg: ChainConfig) -> None:
    expected = (pd.Timestamp(prev_date) + pd.DateOffset(years=1)).date()
    gap = abs((curr_date - expected).days)
    if gap > cfg.date_tolerance_days:
        raise DateMismatch(
            f"Snapshots {prev_date} and {curr_date} are not one year apart "
            f"(off by {gap} days, tolerance {cfg.date_tolerance_days})"
        )


def pair_snapshots_with_diagnostics(
    prev: List[LoanSnapshot],
    curr: List[LoanSnapshot],
    cfg: ChainConfig,
) -> Tuple[List[ObservedTransition], List[Diagnostic]]:
    """
    Pair two snapshots one year apart into observed transitions

    Args:
        prev: Snapshot at t = -1 year
        curr: Snapshot at t = 0
        cfg: Chain configuration (weighting, disappearance policy, date tolerance)

    Returns:
        Transitions sorted by loan_id, plus warnings raised while pairing
    """
    if not prev or not curr:
        raise EmptyInput("Both snapshots must contain at least one loan")

    prev_index = _index_by_loan(prev, "previous")
    curr_index = _index_by_loan(curr, "current")
    check_one_year_apart(_single_date(prev, "previous"), _single_date(curr, "current"), cfg)

    transitions: List[ObservedTransition] = []
    disappeared = 0
    zero_weight = 0
    for loan_id in sorted(prev_index):
        before = prev_index[loan_id]
        from_state = assign_state(before, cfg)
        if from_state in (State.CURED, State.LOST):
            continue

        after = curr_index.get(loan_id)
        if after is None:
            disappeared += 1
            if cfg.disappearance_policy == "exclude":
                continue
            to_state = State.LOST
        elif from_state == State.FORBORNE:
            # a forborne loan resolves within the year: regular status means cured
            to_state = State.CURED if after.months_past_due(cfg) == 0 else State.LOST
        else:
            to_state = assign_state(after, cfg)

        weight = 1.0 if cfg.weighting == "count" else float(before.balance)
        if weight <= 0:
            zero_weight += 1
            continue
        transitions.append(ObservedTransition(loan_id, int(from_state), int(to_state), weight))

    diagnostics: List[Diagnostic] = []
    if disappeared:
        action = "treated as lost" if cfg.disappearance_policy == "lost" else "excluded"
        diagnostics.append(warn(
            "LOANS_DISAPPEARED",
            f"{disappeared} transitive loans absent from the current snapshot were {action}",
        ))
    if zero_weight:
        diagnostics.append(warn(
            "ZERO_WEIGHT_DROPPED",
            f"{zero_weight} observations with zero balance were dropped under balance weighting",
        ))
    logger.info("✅ Paired %d observed transitions", len(transitions))
    return transitions, diagnostics


def pair_snapshots(
    prev: List[LoanSnapshot],
    curr: List[LoanSnapshot],
    cfg: ChainConfig,
) -> List[ObservedTransition]:
    transitions, _ = pair_snapshots_with_diagnostics(prev, curr, cfg)
    return transitions


# --- CSV ingestion ---

def _read_csv(path: str, columns: List[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise ParseError(f"File not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"Could not parse {path}: {e}") from e
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ParseError(f"{path} is missing columns {missing}; expected header {','.join(columns)}")
    return df[columns]


def _parse_forborne(raw: str, row: int) -> bool:
    value = _FORBORNE_VALUES.get(raw.strip().lower())
    if value is None:
        raise ParseError(f"Row {row}: forborne must be one of 0, 1, true, false; got {raw!r}")
    return value


def snapshots_from_frame(df: pd.DataFrame) -> List[LoanSnapshot]:
    seen = set()
    snapshots: List[LoanSnapshot] = []
    for row, record in enumerate(df.to_dict(orient="records"), start=2):
        try:
            snapshot = LoanSnapshot(
                loan_id=str(record["loan_id"]).strip(),
                as_of=date.fromisoformat(str(record["as_of"]).strip()),
                days_past_due=int(str(record["days_past_due"]).strip()),
                forborne=_parse_forborne(str(record["forborne"]), row),
                balance=float(str(record["balance"]).strip() or 0),
            )
        except ValueError as e:
            raise ParseError(f"Row {row}: {e}") from e
        key = (snapshot.loan_id, snapshot.as_of)
        if key in seen:
            raise DuplicateLoan(f"Row {row}: duplicate loan {snapshot.loan_id} on {snapshot.as_of}")
        seen.add(key)
        snapshots.append(snapshot)
    return snapshots


def read_snapshots(path: str) -> List[LoanSnapshot]:
    """Read a snapshot CSV with header loan_id,as_of,days_past_due,forborne,balance"""
    snapshots = snapshots_from_frame(_read_csv(path, SNAPSHOT_COLUMNS))
    logger.info("✅ Read %d loan snapshots from %s", len(snapshots), path)
    return snapshots


def read_transitions(path: str) -> List[ObservedTransition]:
    """Read a transitions CSV with header loan_id,state_from,state_to,weight"""
    df = _read_csv(path, TRANSITION_COLUMNS)
    transitions: List[ObservedTransition] = []
    for row, record in enumerate(df.to_dict(orient="records"), start=2):
        try:
            transitions.append(ObservedTransition(
                loan_id=str(record["loan_id"]).strip(),
                from_state=int(str(record["state_from"]).strip()),
                to_state=int(str(record["state_to"]).strip()),
                weight=float(str(record["weight"]).strip() or 1.0),
            ))
        except ValueError as e:
            raise ParseError(f"Row {row}: {e}") from e
    logger.info("✅ Read %d transitions from %s", len(transitions), path)
    return sorted(transitions, key=lambda t: t.loan_id)
