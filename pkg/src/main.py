"""
TSAW / SRBP Lab - Main Entry Point

Run one experiment from the command line:

    python -m src.main check-rates --preset gaussian-d3
    python -m src.main simulate-tsaw --preset gaussian-d3 --replicas 2 --horizon 1
    python -m src.main simulate-srbp --preset srbp-gauss-d3
    python -m src.main spectral --d 3
    python -m src.main fock --gamma 1 --s 0 0 0.25 --n-max 3
    python -m src.main field --kind lattice_gibbs --d 3 --L 8
    python -m src.main d1-explore
    python -m src.main report
"""

import asyncio
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from src.graph.workflow import run_experiment
from src.schemas.presets import PRESETS, preset_config
from src.schemas.run import RunConfig
from src.tools.model_core import check_conditions
from src.tools.report import write_report
from src.utils.config import settings
from src.utils.errors import ConfigError, LabError
from src.utils.logger import get_logger
from src.utils.persistence import dumps_json, read_json

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_INVALID = 2

# subcommand -> (model, default preset)
COMMANDS = {
    "check-rates": ("tsaw", "gaussian-d3"),
    "simulate-tsaw": ("tsaw", "gaussian-d3"),
    "simulate-srbp": ("srbp", "srbp-gauss-d3"),
    "spectral": ("spectral", None),
    "fock": ("fock", None),
    "field": ("field", None),
    "d1-explore": ("tsaw", "d1-explore"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="TSAW / SRBP Lab - simulation and numerical verification of superdiffusive bounds"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", type=str, choices=sorted(PRESETS), help="Start from a named preset")
    common.add_argument("--config", type=str, help="JSON run config (or a manifest.json to replay)")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--d", type=int, help="Dimension")
    common.add_argument("--output", type=str, help="Output directory (default: OUTPUT_DIR)")
    common.add_argument("--no-report", action="store_true", help="Skip the Markdown report")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--replicas", type=int, help="Independent replicas")
    sim.add_argument("--horizon", type=float, help="Simulation horizon T")
    sim.add_argument("--sample-every", type=float, help="Spacing of the recorded time grid")
    sim.add_argument("--L", type=int, help="Torus side")
    sim.add_argument("--init", choices=["stationary", "empty"], help="Initial environment")

    rate = argparse.ArgumentParser(add_help=False)
    rate.add_argument("--gamma", type=float, help="Rate lower bound gamma")
    rate.add_argument("--s", type=float, nargs="+", help="Even coefficients s0 s2 s4 ...")

    sub.add_parser("check-rates", parents=[common, rate], help="Check the rate-function conditions")

    tsaw = sub.add_parser("simulate-tsaw", parents=[common, sim, rate], help="Simulate the TSAW")
    tsaw.add_argument("--frozen", action="store_true", help="Disable local-time growth")
    tsaw.add_argument("--event-method", choices=["inversion", "thinning"], help="Waiting-time sampler")
    tsaw.add_argument("--no-events", action="store_true", help="Do not keep event logs")

    srbp = sub.add_parser("simulate-srbp", parents=[common, sim], help="Simulate the SRBP")
    srbp.add_argument("--dt", type=float, help="Euler-Maruyama step")
    srbp.add_argument("--amplitude", type=float, help="Potential amplitude a")
    srbp.add_argument("--width", type=float, help="Potential width sigma_V")

    spectral = sub.add_parser("spectral", parents=[common], help="Tabulate spectral constants")
    spectral.add_argument("--ladder", type=int, nargs="+", help="Quadrature ladder")

    fock = sub.add_parser("fock", parents=[common, rate], help="Fock-space operator checks")
    fock.add_argument("--variant", choices=["lattice", "continuum"], default="lattice")
    fock.add_argument("--L-f", dest="L_f", type=int, help="Momentum grid side")
    fock.add_argument("--n-max", dest="n_max", type=int, help="Degree cap")
    fock.add_argument("--lambdas", type=float, nargs="+", help="Decreasing lambda schedule")
    fock.add_argument("--direction", type=int, help="Compensator coordinate")
    fock.add_argument("--no-truncation-check", action="store_true", help="Skip the N_max + 1 repeat")
    fock.add_argument("--qv-rate", dest="qv_rate", type=float, help="Measured jump quadratic-variation rate")
    fock.add_argument("--qv-stderr", dest="qv_stderr", type=float, help="Standard error of --qv-rate")
    fock.add_argument("--reference-run", dest="reference_run", help="Stationary tsaw run directory to cross-check against")

    field = sub.add_parser("field", parents=[common, sim], help="Sample environment fields")
    field.add_argument("--kind", choices=["lattice_gaussian", "lattice_gibbs", "continuum_gaussian"])
    field.add_argument("--sweeps", type=int, help="Gibbs sweeps")
    field.add_argument("--export-slice", action="store_true", help="Also export a 2d CSV slice")

    sub.add_parser("d1-explore", parents=[common, sim, rate], help="d = 1 superdiffusive exploration")

    report = sub.add_parser("report", help="Aggregate stored runs into a Markdown report")
    report.add_argument("--output", type=str, help="Output directory (default: OUTPUT_DIR)")

    return parser


def _load_config_file(path: str) -> Dict[str, Any]:
    source = Path(path)
    if not source.exists():
        raise ConfigError(f"Config file not found: {path}")
    data = read_json(source)
    # a manifest carries the config it was produced from
    if "artifacts" in data and "config" in data:
        data = data["config"]
    return data


def _set(data: Dict[str, Any], dotted: str, value: Any) -> None:
    if value is None:
        return
    *parents, leaf = dotted.split(".")
    node = data
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Merge preset (or config file) and flags into a validated RunConfig.

    Flags win over the config file, which wins over the preset.
    """
    model, default_preset = COMMANDS[args.command]
    if args.command == "fock" and args.variant == "continuum":
        default_preset = "srbp-gauss-d3"
    elif args.command == "fock" and args.gamma is None:
        default_preset = "gaussian-d3"

    if args.config:
        data = _load_config_file(args.config)
    elif args.preset or default_preset:
        data = preset_config(args.preset or default_preset)
    else:
        data = {}
    data["model"] = model

    get = lambda name: getattr(args, name, None)
    _set(data, "seed", get("seed"))
    _set(data, "geometry.d", get("d"))
    _set(data, "geometry.L", get("L"))
    _set(data, "output_dir", get("output"))
    _set(data, "replicas", get("replicas"))
    _set(data, "horizon", get("horizon"))
    _set(data, "sample_every", get("sample_every"))
    _set(data, "init", get("init"))
    _set(data, "dt", get("dt"))

    if get("gamma") is not None or get("s") is not None:
        rate = dict(data.get("rate") or {"gamma": 1.0})
        _set(rate, "gamma", get("gamma"))
        _set(rate, "s_coeffs", get("s"))
        data["rate"] = rate
    if get("amplitude") is not None or get("width") is not None:
        potential = dict(data.get("potential") or {})
        _set(potential, "amplitude", get("amplitude"))
        _set(potential, "width", get("width"))
        data["potential"] = potential
    if data.get("potential") and get("d") is not None:
        data["potential"] = {**data["potential"], "d": get("d")}

    if get("frozen"):
        _set(data, "tsaw.frozen", True)
    if get("no_events"):
        _set(data, "tsaw.keep_events", False)
    _set(data, "tsaw.event_method", get("event_method"))

    _set(data, "spectral.ladder", get("ladder"))

    if args.command == "fock":
        _set(data, "fock.variant", args.variant)
        _set(data, "fock.L_f", args.L_f)
        _set(data, "fock.n_max", args.n_max)
        _set(data, "fock.lambda_schedule", args.lambdas)
        _set(data, "fock.direction", args.direction)
        if args.no_truncation_check:
            _set(data, "fock.truncation_check", False)
        _set(data, "fock.qv_rate", args.qv_rate)
        _set(data, "fock.qv_stderr", args.qv_stderr)
        _set(data, "fock.reference_run", args.reference_run)

    _set(data, "field.kind", get("kind"))
    _set(data, "field.sweeps", get("sweeps"))
    if get("export_slice"):
        _set(data, "field.export_slice", True)

    return RunConfig.model_validate(data)


def emit_error(error: Dict[str, Any]) -> None:
    """Machine-readable error document on stdout."""
    print(json.dumps(error, indent=2, sort_keys=True, default=str))


def cmd_check_rates(config: RunConfig) -> int:
    if config.rate is None:
        raise ConfigError("check-rates needs a rate function")
    report = check_conditions(config.rate)
    print(dumps_json({**report.model_dump(), "all_passed": report.all_passed}))
    return EXIT_OK if report.all_passed else EXIT_INVALID


def cmd_report(output: Optional[str]) -> int:
    path = write_report(Path(output) if output else settings.output_dir)
    print(path.read_text(encoding="utf-8"))
    return EXIT_OK


async def cmd_run(config: RunConfig, write: bool) -> int:
    final_state = await run_experiment(config, write_report=write)
    errors: List[str] = final_state.get("errors", [])

    if errors:
        invalid = final_state.get("current_step") == "config_invalid"
        emit_error({
            "error": "ConfigError" if invalid else "RunFailed",
            "message": errors[0],
            "details": {
                "errors": errors,
                "condition_report": final_state.get("condition_report"),
                "completed_steps": final_state.get("completed_steps", []),
            },
        })
        return EXIT_INVALID if invalid else EXIT_RUN_FAILED

    print(dumps_json(final_state.get("summary", {})))
    if final_state.get("run_dir"):
        logger.info(f"Artifacts in {final_state['run_dir']}")
    if final_state.get("report_path"):
        logger.info(f"Report at {final_state['report_path']}")
    return EXIT_OK


async def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for CLI execution; returns the process exit code."""
    args = build_parser().parse_args(argv)
    settings.ensure_directories()

    try:
        if args.command == "report":
            return cmd_report(args.output)

        config = config_from_args(args)
        logger.info(f"Command: {args.command} (model={config.model}, preset={config.preset}, seed={config.seed})")

        if args.command == "check-rates":
            return cmd_check_rates(config)
        return await cmd_run(config, write=not args.no_report)

    except ValidationError as e:
        emit_error({
            "error": "ValidationError",
            "message": f"{e.error_count()} validation error(s) in run config",
            "details": {"errors": json.loads(e.json())},
        })
        return EXIT_INVALID
    except LabError as e:
        emit_error(e.to_dict())
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
