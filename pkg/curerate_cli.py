"""
Cure Rate Command Line
Subcommands: estimate, analyze, simulate, curve

Exit codes: 0 success (a cyclic diagnosis is a success), 2 parse error,
3 snapshot date mismatch, 4 invariant violation, 5 missing prerequisite
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from services.api_service import get_api_service
from services.chain_service import CSV_FLOAT_FORMAT, read_matrix, write_matrix
from services.config_service import RunConfig, load_config, parse_config_values
from services.errors import CureRateError, ParseError
from services.loan_tape_service import read_snapshots, read_transitions, state_label
from services.report_service import CureRateReport, load_report, write_report
from services.survival_service import write_curve

load_dotenv()

logger = logging.getLogger("curerate")

FIXTURES_DIR = os.path.join(os.path.dirname(os.path.realpath(__file__)), "fixtures")

# bundled matrix -> the published fit it was printed next to
_BUNDLED_REFERENCES = {"example1_A.csv": "example1_reference.json"}

# argparse dest -> config key
_FLAG_KEYS = {
    "seed": "seed",
    "threads": "threads",
    "fit_method": "fit_method",
    "clip_epsilon": "clip_epsilon",
    "delta": "delta",
    "n_paths": "n_paths",
    "start_state": "start_state",
    "max_steps": "max_steps",
    "trace_paths": "trace_paths",
    "reference": "reference_fit_path",
    "n_writeoff": "n_writeoff",
    "weighting": "weighting",
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--seed", help="unsigned 64-bit simulation seed")
    common.add_argument("--threads", help="simulation worker threads")
    common.add_argument("--fit-method", choices=("loglog", "nls", "both"))
    common.add_argument("--clip-epsilon", help="clip survival values into [eps, 1 - eps] before the log-log fit")
    common.add_argument("--delta", help="abscissa of the forborne point, in (0, 1)")
    common.add_argument("--n-writeoff", help="months past due at which a loan is lost")
    common.add_argument("--log-level", default=os.getenv("LOG_LEVEL", "INFO"))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="curerate", description="Cure-rate estimation on an absorbing Markov chain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="estimate a transition matrix from loan data")
    p.add_argument("--prev", help="snapshot CSV at t = -1 year")
    p.add_argument("--curr", help="snapshot CSV at t = 0")
    p.add_argument("--transitions", help="transitions CSV (loan_id,state_from,state_to,weight)")
    p.add_argument("--counts", help="observation-count sidecar (default: <out>.counts.json)")
    p.add_argument("--weighting", choices=("count", "balance"))

    p = sub.add_parser("analyze", parents=[common], help="full pipeline on a matrix CSV")
    p.add_argument("matrix", help="(N+2)x(N+2) matrix CSV in canonical order")
    p.add_argument("--export-dir", help="write transition.csv, fundamental.csv and t_inf.csv here")
    p.add_argument(
        "--reference",
        help="JSON file of published fit values to display next to the fit "
             "(default for fixtures/example1_A.csv: fixtures/example1_reference.json)",
    )
    p.add_argument("--simulate", action="store_true", help="add the Monte Carlo cross-check")
    p.add_argument("--n-paths")
    p.add_argument("--max-steps")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo paths over a matrix CSV")
    p.add_argument("matrix", help="(N+2)x(N+2) matrix CSV in canonical order")
    p.add_argument("--n-paths")
    p.add_argument("--start-state", help="state index, comma-separated composition, or none")
    p.add_argument("--max-steps")
    p.add_argument("--trace", help="per-path trace CSV (path_id,step,state)")
    p.add_argument("--trace-paths", help="number of paths to trace")
    p.add_argument("--horizon", type=int, help="years of deterministic portfolio projection")
    p.add_argument("--composition", help="comma-separated portfolio weights over all N+2 states")

    p = sub.add_parser("curve", parents=[common], help="raw-vs-fitted curve CSV from a saved report")
    p.add_argument("report", help="report JSON written by analyze")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flags; flags go through the same parsers as the file"""
    raw = {
        key: str(getattr(args, dest))
        for dest, key in _FLAG_KEYS.items()
        if getattr(args, dest, None) is not None
    }
    return load_config(args.config, **parse_config_values(raw))


def _bundled_reference(matrix_path: str) -> Optional[str]:
    matrix_path = os.path.realpath(matrix_path)
    if os.path.dirname(matrix_path) != FIXTURES_DIR:
        return None
    name = _BUNDLED_REFERENCES.get(os.path.basename(matrix_path))
    return os.path.join(FIXTURES_DIR, name) if name else None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True)


def _parse_composition(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",")]
    except ValueError as e:
        raise ParseError(f"Invalid composition {raw!r}: {e}") from e


def cmd_estimate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    service = get_api_service()
    if args.transitions:
        matrix = service.estimate_from_transitions(read_transitions(args.transitions), run)
    elif args.prev and args.curr:
        matrix = service.estimate_from_snapshots(read_snapshots(args.prev), read_snapshots(args.curr), run)
    else:
        raise ParseError("estimate needs --prev and --curr, or --transitions")

    write_matrix(matrix.entries, args.out or sys.stdout)
    counts_path = args.counts or (f"{os.path.splitext(args.out)[0]}.counts.json" if args.out else None)
    summary = _dumps(service.counts_summary(matrix))
    if counts_path:
        _emit(summary, counts_path)
    else:
        sys.stderr.write(summary + "\n")
    logger.info("✅ Estimated %dx%d matrix", matrix.n_states, matrix.n_states)
    return 0


def _state_table(report: CureRateReport) -> pd.DataFrame:
    rows: List[Dict[str, Any]] = []
    for state in range(2, report.n_writeoff + 2):
        r = state - 2
        rows.append({
            "state": state,
            "label": state_label(state),
            "cure_probability": report.t_inf[r][0] if report.t_inf else np.nan,
            "loss_probability": report.t_inf[r][1] if report.t_inf else np.nan,
            "expected_time": report.expected_time[r] if report.expected_time else np.nan,
        })
    return pd.DataFrame(rows)


def cmd_analyze(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if run.analysis.reference_fit_path is None:
        run = run.with_overrides(reference_fit_path=_bundled_reference(args.matrix))
    service = get_api_service()
    matrix = read_matrix(args.matrix, run.chain)
    report = service.analyze(matrix, run, include_simulation=args.simulate)
    if args.export_dir:
        service.export_matrices(matrix, args.export_dir)

    if args.format == "csv":
        _emit(_state_table(report).to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="").rstrip("\n"),
              args.out)
    else:
        text = write_report(report)
        _emit(text, args.out)

    if report.cure_rate is None:
        logger.info("✅ Verdict: %s (no cure rate)", report.classification.verdict)
    else:
        logger.info("✅ Verdict: %s, cure rate %.4f", report.classification.verdict, report.cure_rate)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    if args.horizon is not None and not args.composition:
        raise ParseError("--horizon needs --composition")
    composition = _parse_composition(args.composition) if args.composition else None
    matrix = read_matrix(args.matrix, run.chain)
    summary, trace = get_api_service().simulate(matrix, run, horizon=args.horizon, composition=composition)

    if args.trace:
        trace.to_csv(args.trace, index=False)
        logger.info("✅ Wrote %d trace rows to %s", len(trace), args.trace)

    if args.format == "csv":
        frame = pd.DataFrame(summary["simulation"]["per_start"]).drop(columns=["mean_visits", "se_visits"])
        _emit(frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, na_rep="").rstrip("\n"), args.out)
    else:
        _emit(_dumps(summary), args.out)
    return 0


def cmd_curve(args: argparse.Namespace) -> int:
    report = load_report(args.report)
    frame = get_api_service().curve(report)
    write_curve(frame, args.out or sys.stdout)
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=str(args.log_level).upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except CureRateError as e:
        logger.error("❌ %s: %s", e.code, e)
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
