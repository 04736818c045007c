"""
Cure Rate Absorption Service
Fundamental matrix (I - S)^-1, absorption probabilities, expected time to
resolution and expected visit times between transitive states
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy import linalg

from services.chain_service import Blocks, TransitionMatrix, to_blocks
from services.errors import NotTransitive, SingularBlock
from services.loan_tape_service import StateIndex

logger = logging.getLogger(__name__)

RCOND_THRESHOLD = 1e-12
RESIDUAL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class AbsorptionResult:
    """
    Absorption quantities for the N transitive states S2..S_{N+1}

    Row r of every array corresponds to state r + 2.
    """
    fundamental: np.ndarray
    t_inf: np.ndarray
    expected_time: np.ndarray

    @property
    def cure_probabilities(self) -> np.ndarray:
        return self.t_inf[:, 0]

    @property
    def loss_probabilities(self) -> np.ndarray:
        return self.t_inf[:, 1]

    def visit_time(self, from_state: StateIndex, to_state: StateIndex) -> float:
        return early_warning_times(self, from_state, to_state)

    def to_dict(self) -> Dict[str, list]:
        return {
            "fundamental": self.fundamental.tolist(),
            "t_inf": self.t_inf.tolist(),
            "expected_time": self.expected_time.tolist(),
        }


def fundamental_matrix(S: np.ndarray) -> np.ndarray:
    """
    (I - S)^-1 by a dense LU solve with partial pivoting

    Raises:
        SingularBlock: reciprocal condition number below 1e-12 or a failed residual check,
            i.e. a recurrent class among the transitive states
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    identity = np.eye(n)
    M = identity - S
    try:
        with np.errstate(divide="ignore"):
            rcond = 1.0 / np.linalg.cond(M, 1)
    except np.linalg.LinAlgError:
        rcond = 0.0
    if not np.isfinite(rcond) or rcond < RCOND_THRESHOLD:
        raise SingularBlock(f"I - S is numerically singular (rcond {rcond:.3e})")

    lu, piv = linalg.lu_factor(M)
    F = linalg.lu_solve((lu, piv), identity)
    residual = np.abs(M @ F - identity).max()
    if residual >= RESIDUAL_TOLERANCE:
        raise SingularBlock(f"I - S inverse failed the residual check ({residual:.3e})")
    return F


def absorb(blocks: Blocks) -> AbsorptionResult:
    """T_inf = F T; expected time L_i is the row sum of F"""
    F = fundamental_matrix(blocks.S)
    t_inf = F @ blocks.T
    expected_time = F.sum(axis=1)
    logger.info("✅ Absorption computed for %d transitive states", F.shape[0])
    return AbsorptionResult(fundamental=F, t_inf=t_inf, expected_time=expected_time)


def absorb_matrix(A: TransitionMatrix) -> AbsorptionResult:
    return absorb(to_blocks(A))


def early_warning_times(result: AbsorptionResult, from_state: StateIndex, to_state: StateIndex) -> float:
    """Expected number of periods spent in to_state starting from from_state, L(from, to)"""
    n = result.fundamental.shape[0]
    for state in (from_state, to_state):
        if not 2 <= state < n + 2:
            raise NotTransitive(f"State {state} is not transitive (expected 2..{n + 1})")
    return float(result.fundamental[from_state - 2, to_state - 2])


def limit_matrix(A: TransitionMatrix, result: AbsorptionResult) -> np.ndarray:
    """A_inf = lim A^n: absorbing rows unchanged, transitive rows [T_inf | 0]"""
    limit = np.zeros_like(A.entries)
    limit[0, 0] = 1.0
    limit[1, 1] = 1.0
    limit[2:, :2] = result.t_inf
    return limit
