"""
SurveyAlloc command line

Subcommands mirror the planning pipeline:

    prepare -> check -> allocate -> select-psu -> select-ssu -> evaluate, plus sensitivity

and synth, which writes a synthetic frame. Every run writes run_manifest.json to the
output directory. Exit codes: 0 success, 1 categorized failure, 2 usage error.
"""

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from cli.plots import allocation_figure, emit_plots, sensitivity_figure, weight_figure
from cli.run_config import RunConfig, build_run_config
from config.settings import get_settings, reload_settings
from data.loader import load_inputs, read_table, write_table
from data.validation import check_input, validate_domains
from schemas import tables
from schemas.errors import EvaluationError, SurveyAllocError
from services.evaluator import eval_2stage
from services.frame_prep import prepare_inputs_scenario1
from services.one_stage import beat_1st
from services.psu_selection import plan_psu_selection, select_from_plans
from services.ssu_selection import select_ssu
from services.synthetic_frame import FrameSpec, default_frame_spec, synth_frame
from services.two_stage import StopRule, beat_2st, sensitivity_min_ssu
from utils.logger import get_logger, log_stage, log_stage_error, setup_logging

logger = get_logger(__name__)

COMMANDS = ["prepare", "synth", "check", "allocate", "select-psu", "select-ssu", "evaluate", "sensitivity"]


# ============================================================================
# Argument parsing
# ============================================================================


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or YAML file with option values (flags win)")
    common.add_argument("-o", "--output-dir", help="Directory for result files (env SURVEYALLOC_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, help="Master seed of every random draw")
    common.add_argument("--jobs", type=int, help="Worker threads for independent runs")
    common.add_argument("-v", "--verbose", action="store_true", default=None, help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", default=None, help="Warnings and errors only")
    common.add_argument("--log-json", action="store_true", default=None, help="JSON log records")
    common.add_argument("--log-dir", help="Also write rotating log files here")
    return common


def _allocation_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--strata", help="Strata file (STRATUM, N, M*, S*, COST, CENS, DOM*)")
    parser.add_argument("--errors", help="Precision constraints (DOM, CV*)")
    parser.add_argument("--psu", help="PSU file (PSU_ID, STRATUM, PSU_MOS)")
    parser.add_argument("--des", help="Design file (STRATUM, STRAT_MOS, DELTA, MINIMUM)")
    parser.add_argument("--rho", help="Intraclass correlations (STRATUM, RHO_AR*, RHO_NAR*)")
    parser.add_argument("--deft", help="Starting deft (STRATUM, DEFT*)")
    parser.add_argument("--effst", help="Estimator effects (STRATUM, EFFST*)")
    parser.add_argument("--minnumstrat", type=int, help="Minimum SSUs per stratum (default 2)")
    parser.add_argument("--min-psu-strat", type=int, help="Minimum NSR PSUs per stratum (default 2)")
    parser.add_argument("--max-ssu-diff", type=float, help="Stop rule: SSU total change (default 5)")
    parser.add_argument("--max-deft-diff", type=float, help="Stop rule: largest deft change (default 0.06)")
    parser.add_argument("--max-iters", type=int, help="Stop rule: iteration cap (default 20)")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-parser per pipeline stage"""
    parser = argparse.ArgumentParser(
        prog="surveyalloc",
        description="Optimal allocation and selection for stratified one- and two-stage sample designs",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common = _common_options()

    prepare = sub.add_parser("prepare", parents=[common], help="Build allocation inputs from a frame")
    prepare.add_argument("--frame", help="Unit-level frame CSV")
    prepare.add_argument("--id-psu", help="PSU identifier column")
    prepare.add_argument("--id-ssu", help="Unit identifier column")
    prepare.add_argument("--strata-var", help="Stratum column")
    prepare.add_argument("--target-vars", nargs="+", help="Target variable columns")
    prepare.add_argument("--deff-var", help="Column grouping strata for rho")
    prepare.add_argument("--domain-var", "--domain-vars", dest="domain_vars", nargs="+", help="Domain columns")
    prepare.add_argument("--binary-vars", nargs="+", help="Targets that must be 0/1")
    prepare.add_argument("--delta", type=float, help="Elementary units per SSU (default 1)")
    prepare.add_argument("--minimum", type=int, help="Minimum SSUs per selected PSU (default 50)")
    prepare.add_argument("--deff-sugg", type=float, help="Suggested deff for the deff table")
    prepare.add_argument("--deff-sugg-start", action="store_true", default=None, help="Use it as starting deft")

    synth = sub.add_parser("synth", parents=[common], help="Write a synthetic frame")
    synth.add_argument("--spec", help="YAML description of the frame (default: built-in 6-strata frame)")

    check = sub.add_parser("check", parents=[common], help="Compare strata sizes with PSU totals")
    check.add_argument("--strata")
    check.add_argument("--psu")
    check.add_argument("--des")

    allocate = sub.add_parser("allocate", parents=[common], help="Optimal allocation")
    allocate.add_argument("--stages", type=int, choices=[1, 2], help="One- or two-stage design (default 1)")
    _allocation_inputs(allocate)

    select_psu = sub.add_parser("select-psu", parents=[common], help="Select PSUs with Sampford's method")
    select_psu.add_argument("--alloc2", help="alloc2.csv from allocate --stages 2")
    select_psu.add_argument("--psu")
    select_psu.add_argument("--des")
    select_psu.add_argument("--psu-per-substratum", type=int, help="PSUs drawn per NSR sub-stratum")

    select_ssu_parser = sub.add_parser("select-ssu", parents=[common], help="Systematic selection of SSUs")
    select_ssu_parser.add_argument("--frame")
    select_ssu_parser.add_argument("--sample-psu", help="sample_PSU.csv from select-psu")
    select_ssu_parser.add_argument("--id-psu", help="PSU identifier column of the frame")

    evaluate = sub.add_parser("evaluate", parents=[common], help="Monte Carlo evaluation of the design")
    evaluate.add_argument("--frame")
    evaluate.add_argument("--strata")
    evaluate.add_argument("--errors")
    evaluate.add_argument("--alloc2")
    evaluate.add_argument("--psu")
    evaluate.add_argument("--des")
    evaluate.add_argument("--target-vars", nargs="+")
    evaluate.add_argument("--strata-var")
    evaluate.add_argument("--id-psu")
    evaluate.add_argument("--nsampl", type=int, help="Replicate samples (default 500)")
    evaluate.add_argument("--psu-per-substratum", type=int)
    evaluate.add_argument(
        "--redraw-psu", action=argparse.BooleanOptionalAction, default=None, help="Redraw PSUs in every replicate"
    )

    sensitivity = sub.add_parser("sensitivity", parents=[common], help="PSUs/SSUs over a MINIMUM grid")
    _allocation_inputs(sensitivity)
    sensitivity.add_argument("--min", type=int, help="Smallest MINIMUM")
    sensitivity.add_argument("--max", type=int, help="Largest MINIMUM")
    sensitivity.add_argument("--n-points", type=int, help="Grid points (default 10)")
    return parser


# ============================================================================
# Subcommands
# ============================================================================


def _stop_rule(cfg: RunConfig) -> StopRule:
    default = StopRule.from_settings()
    return StopRule(
        max_ssu_diff=cfg.max_ssu_diff or default.max_ssu_diff,
        max_deft_diff=cfg.max_deft_diff or default.max_deft_diff,
        max_iters=cfg.max_iters or default.max_iters,
    )


def _jobs(cfg: RunConfig) -> int:
    return cfg.jobs if cfg.jobs is not None else get_settings().jobs


def _write(frames: Dict[str, pd.DataFrame], out: Path, float_format: Optional[str]) -> List[Path]:
    return [write_table(df, out / f"{name}.csv", float_format) for name, df in frames.items()]


def cmd_prepare(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    frame = read_table(cfg.frame)
    prepared = prepare_inputs_scenario1(
        frame,
        id_psu=cfg.id_psu,
        id_ssu=cfg.id_ssu,
        strata_var=cfg.strata_var,
        target_vars=cfg.target_vars,
        deff_var=cfg.deff_var,
        domain_vars=cfg.domain_vars,
        delta=cfg.delta,
        minimum=cfg.minimum,
        deff_sugg=cfg.deff_sugg,
        deff_sugg_as_start=cfg.deff_sugg_start,
        binary_vars=cfg.binary_vars,
    )
    return _write(prepared.as_dict(), out, float_format)


def cmd_synth(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    if cfg.spec:
        spec = FrameSpec(**yaml.safe_load(Path(cfg.spec).read_text(encoding="utf-8")))
    else:
        spec = default_frame_spec()
    return _write({"frame": synth_frame(spec, cfg.seed)}, out, float_format)


def cmd_check(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    strata = tables.strata_from_frame(read_table(cfg.strata))
    psus = tables.psus_from_frame(read_table(cfg.psu))
    design = tables.design_from_frame(read_table(cfg.des))
    report, corrected = check_input(strata, design, psus)
    return _write({"check_input": report, "strata_checked": tables.strata_to_frame(corrected)}, out, float_format)


def _two_stage_inputs(cfg: RunConfig):
    bundle = load_inputs(cfg.strata, cfg.errors, cfg.psu, cfg.des, cfg.rho, cfg.deft, cfg.effst)
    _, bundle.strata = check_input(bundle.strata, bundle.design, bundle.psus)
    return bundle


def cmd_allocate(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    if cfg.stages == 1:
        bundle = load_inputs(cfg.strata, cfg.errors, effst=cfg.effst, deft=cfg.deft)
        n_variables = bundle.n_variables
        ids = [s.stratum_id for s in bundle.strata]
        inflation = None
        if bundle.deft is not None or bundle.effst is not None:
            inflation = tables.factor_matrix(bundle.deft, ids, n_variables) * np.sqrt(
                tables.factor_matrix(bundle.effst, ids, n_variables)
            )
        result = beat_1st(bundle.strata, bundle.constraints, cfg.minnumstrat, inflation=inflation)
    else:
        bundle = _two_stage_inputs(cfg)
        result = beat_2st(
            bundle.strata,
            bundle.constraints,
            bundle.design,
            bundle.psus,
            bundle.rho,
            deft_start=bundle.deft,
            effst=bundle.effst,
            minnumstrat=cfg.minnumstrat,
            min_psu_strat=cfg.min_psu_strat,
            stop=_stop_rule(cfg),
        )

    frames = {
        "alloc": result.alloc,
        "expected_cv": result.expected_cv,
        "planned_cv": result.planned_cv,
        "sensitivity": result.sensitivity,
        "iterations": result.iterations,
    }
    alloc2 = None
    if result.is_two_stage:
        alloc2 = result.alloc2_table()
        frames["alloc2"] = alloc2
        frames["deft_trace"] = result.deft_trace
    written = _write(frames, out, float_format)
    written += emit_plots({"alloc": allocation_figure(alloc2, result.alloc)}, out)
    if not result.converged:
        logger.warning("Allocation returned without convergence; see iterations.csv")
    return written


def cmd_select_psu(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    ids, n_ssu, thresholds, psu_nsr = tables.alloc2_from_frame(read_table(cfg.alloc2))
    psus = tables.psus_from_frame(read_table(cfg.psu))
    design = tables.design_from_frame(read_table(cfg.des))
    plans = plan_psu_selection(ids, n_ssu, thresholds, psus, design, cfg.psu_per_substratum, psu_nsr)
    selection = select_from_plans(plans, cfg.seed)
    return _write(
        {"universe_PSU": selection.universe, "sample_PSU": selection.sample, "PSU_stats": selection.stats},
        out,
        float_format,
    )


def cmd_select_ssu(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    frame = read_table(cfg.frame)
    sample_psu = read_table(cfg.sample_psu)
    sample = select_ssu(frame, sample_psu, cfg.seed, psu_col=cfg.id_psu)
    written = _write({"sample_SSU": sample}, out, float_format)
    written += emit_plots({"weights": weight_figure(sample["WEIGHT"])}, out)
    return written


def cmd_evaluate(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    nsampl = cfg.nsampl if cfg.nsampl is not None else get_settings().nsampl
    if nsampl < 2:
        raise EvaluationError("nsampl must be >= 2")
    bundle = load_inputs(cfg.strata, cfg.errors)
    cells = validate_domains(bundle.strata, bundle.constraints)
    ids, n_ssu, thresholds, psu_nsr = tables.alloc2_from_frame(read_table(cfg.alloc2))
    psus = tables.psus_from_frame(read_table(cfg.psu))
    design = tables.design_from_frame(read_table(cfg.des))
    plans = plan_psu_selection(ids, n_ssu, thresholds, psus, design, cfg.psu_per_substratum, psu_nsr)
    report = eval_2stage(
        read_table(cfg.frame),
        plans,
        bundle.strata,
        cells,
        cfg.target_vars,
        nsampl=nsampl,
        seed=cfg.seed,
        strata_var=cfg.strata_var,
        psu_col=cfg.id_psu,
        redraw_psu=cfg.redraw_psu,
        jobs=_jobs(cfg),
    )
    return _write({"coeff_var": report.coeff_var, "eval_summary": report.summary}, out, float_format)


def cmd_sensitivity(cfg: RunConfig, out: Path, float_format: Optional[str]) -> List[Path]:
    bundle = _two_stage_inputs(cfg)
    table = sensitivity_min_ssu(
        bundle.strata,
        bundle.constraints,
        bundle.design,
        bundle.psus,
        bundle.rho,
        cfg.min,
        cfg.max,
        n_points=cfg.n_points,
        deft_start=bundle.deft,
        effst=bundle.effst,
        minnumstrat=cfg.minnumstrat,
        min_psu_strat=cfg.min_psu_strat,
        stop=_stop_rule(cfg),
        jobs=_jobs(cfg),
    )
    written = _write({"sensitivity_min_ssu": table}, out, float_format)
    written += emit_plots({"sensitivity_min_ssu": sensitivity_figure(table)}, out)
    return written


HANDLERS: Dict[str, Callable[[RunConfig, Path, Optional[str]], List[Path]]] = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "check": cmd_check,
    "allocate": cmd_allocate,
    "select-psu": cmd_select_psu,
    "select-ssu": cmd_select_ssu,
    "evaluate": cmd_evaluate,
    "sensitivity": cmd_sensitivity,
}


# ============================================================================
# Entry point
# ============================================================================


def _write_manifest(out: Path, manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Execute one subcommand

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Exit code: 0 success, 1 categorized failure, 2 usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    settings = reload_settings()
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg: Optional[RunConfig] = None
    out = Path(settings.output_dir)
    manifest = {
        "tool": settings.app_name,
        "version": settings.app_version,
        "command": args.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "started_at": datetime.now(timezone.utc).isoformat(),
    }
    start = time.time()
    try:
        cfg = build_run_config(args.command, flags, args.config)
        out = Path(cfg.output_dir or settings.output_dir)
        level = "DEBUG" if cfg.verbose else "WARNING" if cfg.quiet else settings.log_level.value
        setup_logging(
            log_dir=cfg.log_dir or settings.log_dir,
            log_level=level,
            json_format=cfg.log_json or settings.get_logging_config()["json_format"],
            command=args.command,
            seed=cfg.seed,
        )
        cfg.require()
        manifest["parameters"] = cfg.manifest()
        manifest["settings"] = {
            "bethel_epsilon": settings.bethel_epsilon,
            "bethel_max_iters": settings.bethel_max_iters,
            "minnumstrat": settings.minnumstrat,
            "min_psu_strat": settings.min_psu_strat,
            "sampford_max_attempts": settings.sampford_max_attempts,
            "jobs": settings.jobs,
        }
        manifest["seed"] = cfg.seed

        log_stage(logger, args.command, output_dir=str(out))
        written = HANDLERS[args.command](cfg, out, settings.float_format)
        manifest["outputs"] = sorted(p.name for p in written)
        manifest["status"] = "ok"
        code = 0
    except SurveyAllocError as exc:
        log_stage_error(logger, args.command, exc, category=exc.category)
        print(f"surveyalloc: {exc.category} error: {exc}", file=sys.stderr)
        manifest["status"] = "failed"
        manifest["error"] = {"category": exc.category, "message": str(exc)}
        code = exc.exit_code
    except Exception as exc:
        log_stage_error(logger, args.command, exc, category="internal")
        print(f"surveyalloc: internal error: {exc}", file=sys.stderr)
        manifest["status"] = "failed"
        manifest["error"] = {"category": "internal", "message": str(exc)}
        code = 1

    manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
    manifest["duration_s"] = round(time.time() - start, 3)
    try:
        _write_manifest(out, manifest)
    except OSError as exc:
        logger.warning(f"Could not write run manifest: {exc}")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
