"""
Cure Rate Configuration Service
Chain, simulation and analysis settings loaded from a flat key=value file.
The file is read with the dotenv parser, so comments and quoting behave as in .env
"""

import os
import logging
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Callable, Dict, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv

from services.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

WEIGHTINGS = ("count", "balance")
ZERO_ROW_POLICIES = ("error", "lost")
DISAPPEARANCE_POLICIES = ("lost", "exclude")
FIT_METHODS = ("loglog", "nls", "both")

StartState = Union[int, Tuple[float, ...], None]


@dataclass(frozen=True)
class ChainConfig:
    """State-space conventions: write-off month N, NPL threshold, forborne point"""
    n_writeoff: int = 8
    npl_threshold: int = 3
    delta: float = 0.5
    month_length_days: int = 30
    weighting: str = "count"
    zero_row_policy: str = "lost"
    disappearance_policy: str = "lost"
    date_tolerance_days: int = 15
    edge_threshold: float = 0.0

    def __post_init__(self):
        if self.n_writeoff < 4:
            raise ConfigError(f"n_writeoff must be >= 4, got {self.n_writeoff}")
        if not 1 <= self.npl_threshold < self.n_writeoff:
            raise ConfigError(
                f"npl_threshold must satisfy 1 <= npl_threshold < n_writeoff, got {self.npl_threshold}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.month_length_days < 1:
            raise ConfigError("month_length_days must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}")
        if self.zero_row_policy not in ZERO_ROW_POLICIES:
            raise ConfigError(f"zero_row_policy must be one of {ZERO_ROW_POLICIES}")
        if self.disappearance_policy not in DISAPPEARANCE_POLICIES:
            raise ConfigError(f"disappearance_policy must be one of {DISAPPEARANCE_POLICIES}")
        if self.date_tolerance_days < 0:
            raise ConfigError("date_tolerance_days must be non-negative")
        if self.edge_threshold < 0:
            raise ConfigError("edge_threshold must be non-negative")

    @property
    def n_states(self) -> int:
        return self.n_writeoff + 2


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings"""
    seed: int = 42
    n_paths: int = 100_000
    max_steps: int = 1000
    # int: one start state; tuple: composition weights per state; None: every transitive state
    start_state: StartState = None
    threads: int = 1
    trace_paths: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if isinstance(self.start_state, tuple) and any(w < 0 for w in self.start_state):
            raise ConfigError("composition weights must be non-negative")


@dataclass(frozen=True)
class AnalysisConfig:
    """Survival fitting and reporting settings"""
    fit_method: str = "loglog"
    clip_epsilon: float = 0.0
    hazard_grid_step: float = 0.25
    early_warning_pairs: Tuple[Tuple[int, int], ...] = ((3, 5), (4, 5))
    # JSON of published fit values shown beside the computed fit, e.g. fixtures/example1_reference.json
    reference_fit_path: Optional[str] = None

    def __post_init__(self):
        if self.fit_method not in FIT_METHODS:
            raise ConfigError(f"fit_method must be one of {FIT_METHODS}")
        if not 0.0 <= self.clip_epsilon < 0.5:
            raise ConfigError("clip_epsilon must lie in [0, 0.5)")
        if self.hazard_grid_step <= 0:
            raise ConfigError("hazard_grid_step must be positive")


@dataclass(frozen=True)
class RunConfig:
    chain: ChainConfig = field(default_factory=ChainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chain": asdict(self.chain),
            "sim": asdict(self.sim),
            "analysis": asdict(self.analysis),
        }

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply flat key overrides (None values are ignored)"""
        sections: Dict[str, Dict[str, Any]] = {"chain": {}, "sim": {}, "analysis": {}}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _KEYS:
                raise ConfigError(f"Unknown configuration key: {key}")
            sections[_KEYS[key][0]][key] = value
        return RunConfig(
            chain=replace(self.chain, **sections["chain"]),
            sim=replace(self.sim, **sections["sim"]),
            analysis=replace(self.analysis, **sections["analysis"]),
        )


def _parse_int(value: str) -> int:
    return int(value.strip())


def _parse_start_state(value: str) -> StartState:
    value = value.strip()
    if not value or value.lower() == "none":
        return None
    if "," in value:
        return tuple(float(v) for v in value.split(","))
    return int(value)


def _parse_pairs(value: str) -> Tuple[Tuple[int, int], ...]:
    pairs = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        left, right = item.split(":")
        pairs.append((int(left), int(right)))
    return tuple(pairs)


def _parse_optional_str(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


# key -> (section, parser)
_KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    "n_writeoff": ("chain", _parse_int),
    "npl_threshold": ("chain", _parse_int),
    "delta": ("chain", float),
    "month_length_days": ("chain", _parse_int),
    "weighting": ("chain", str.strip),
    "zero_row_policy": ("chain", str.strip),
    "disappearance_policy": ("chain", str.strip),
    "date_tolerance_days": ("chain", _parse_int),
    "edge_threshold": ("chain", float),
    "seed": ("sim", _parse_int),
    "n_paths": ("sim", _parse_int),
    "max_steps": ("sim", _parse_int),
    "start_state": ("sim", _parse_start_state),
    "threads": ("sim", _parse_int),
    "trace_paths": ("sim", _parse_int),
    "fit_method": ("analysis", str.strip),
    "clip_epsilon": ("analysis", float),
    "hazard_grid_step": ("analysis", float),
    "early_warning_pairs": ("analysis", _parse_pairs),
    "reference_fit_path": ("analysis", _parse_optional_str),
}


def parse_config_values(values: Dict[str, Optional[str]]) -> Dict[str, Any]:
    """Convert raw key=value strings into typed overrides"""
    parsed: Dict[str, Any] = {}
    for key, raw in values.items():
        key = key.strip().lower()
        if key not in _KEYS:
            raise ConfigError(f"Unknown configuration key: {key}")
        if raw is None:
            raise ConfigError(f"Configuration key {key} has no value")
        try:
            parsed[key] = _KEYS[key][1](raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value for {key}: {raw!r} ({e})") from e
    return parsed


def load_config(path: Optional[str] = None, **overrides: Any) -> RunConfig:
    """
    Load a run configuration

    Args:
        path: Optional flat key=value file; every key is optional
        overrides: Flat keys (same names as the file) that win over the file

    Returns:
        Validated RunConfig
    """
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        values = parse_config_values(dotenv_values(path))
        logger.info("✅ Loaded %d config keys from %s", len(values), path)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return default_config.with_overrides(**values)


# Global default configuration
default_config = RunConfig()


def get_default_config() -> RunConfig:
    """Get the global default run configuration"""
    return default_config
