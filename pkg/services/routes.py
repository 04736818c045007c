"""
Cure Rate API Routes
FastAPI routes exposing the cure-rate pipeline
"""

import asyncio
import io
import logging
from typing import Any, Dict, List, Optional

from fastapi import APIRouter, File, Form, HTTPException, UploadFile
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from services.api_service import get_api_service
from services.chain_service import matrix_from_array
from services.config_service import load_config, parse_config_values
from services.errors import CureRateError
from services.loan_tape_service import read_snapshots

logger = logging.getLogger(__name__)

# Initialize router
router = APIRouter(prefix="/api", tags=["Cure Rate"])


# Pydantic models
class AnalyzeRequest(BaseModel):
    matrix: List[List[float]]
    config: Dict[str, Any] = Field(default_factory=dict)
    include_simulation: bool = False


class SimulateRequest(BaseModel):
    matrix: List[List[float]]
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    n_paths: Optional[int] = None
    start_state: Optional[int] = None
    horizon: Optional[int] = None
    composition: Optional[List[float]] = None


# Initialize API service
api_service = get_api_service()


def _run_config(values: Dict[str, Any], **overrides: Any):
    """Config values arrive as JSON scalars; they go through the same parsers as the config file"""
    parsed = parse_config_values({key: str(value) for key, value in values.items()})
    parsed.update({k: v for k, v in overrides.items() if v is not None})
    return load_config(**parsed)


def _error_response(error: CureRateError) -> JSONResponse:
    logger.warning("⚠️ %s: %s", error.code, error)
    return JSONResponse(status_code=422, content=error.to_dict())


@router.post("/analyze")
async def analyze(request: AnalyzeRequest):
    """Full pipeline on an inline matrix; returns the cure-rate report"""
    try:
        run = _run_config(request.config)
        matrix = matrix_from_array(request.matrix, run.chain, source="request matrix")
        report = await asyncio.to_thread(
            api_service.analyze, matrix, run, include_simulation=request.include_simulation,
        )
        return report.to_json_dict()

    except CureRateError as e:
        return _error_response(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.post("/simulate")
async def simulate(request: SimulateRequest):
    """Monte Carlo run with analytic deltas and an optional portfolio projection"""
    try:
        run = _run_config(
            request.config, seed=request.seed, n_paths=request.n_paths, start_state=request.start_state,
        )
        matrix = matrix_from_array(request.matrix, run.chain, source="request matrix")
        summary, _ = await asyncio.to_thread(
            api_service.simulate, matrix, run, horizon=request.horizon, composition=request.composition,
        )
        return summary

    except CureRateError as e:
        return _error_response(e)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.post("/estimate")
async def estimate(
    prev: UploadFile = File(...),
    curr: UploadFile = File(...),
    n_writeoff: Optional[int] = Form(None),
    weighting: Optional[str] = Form(None),
):
    """
    Estimate a transition matrix from two uploaded snapshot CSVs
    """
    try:
        run = load_config(n_writeoff=n_writeoff, weighting=weighting)
        previous = await asyncio.to_thread(read_snapshots, io.BytesIO(await prev.read()))
        current = await asyncio.to_thread(read_snapshots, io.BytesIO(await curr.read()))
        matrix = await asyncio.to_thread(api_service.estimate_from_snapshots, previous, current, run)
        return {
            "matrix": matrix.entries.tolist(),
            **api_service.counts_summary(matrix),
        }

    except CureRateError as e:
        return _error_response(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/system")
async def get_system_info():
    """Get pipeline information"""
    try:
        return api_service.get_system_info()

    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "system": "curerate",
        "message": "API is running",
    }
