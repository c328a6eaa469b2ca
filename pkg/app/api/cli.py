import argparse
import json
import logging
import sys
from typing import List, Optional

from app.config import load_settings
from app.errors import ConfigError, InvalidArgumentError, LabError
from app.models.schemas import RunReport
from app.services.config_service import ConfigService
from app.services.experiment_service import ExperimentService
from app.services.mesh_service import GENERATOR_PARAMS, MeshService

logger = logging.getLogger(__name__)

EXIT_PASSED = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(
        prog="schrodinger-lab",
        description="Discrete Schrodinger operators: divergence identity, vanishing and phase theorems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-mesh", parents=[common], help="Generate a mesh file")
    gen.add_argument("generator", choices=sorted(GENERATOR_PARAMS))
    gen.add_argument("params", nargs="*", type=float, help="Generator parameters in positional order")
    gen.add_argument("--out", help="Mesh file to write (default: standard output)")

    run = sub.add_parser("run", parents=[common], help="Run an experiment from a configuration file")
    run.add_argument("--config", required=True, help="Experiment configuration file")
    run.add_argument("--out", help="Output directory (overrides the configuration and LAB_OUTPUT_DIR)")
    run.add_argument("--seed", type=int, help="Seed override")

    check = sub.add_parser("validate-mesh", parents=[common], help="Check every invariant of a mesh file")
    check.add_argument("path")

    show = sub.add_parser("show-report", parents=[common], help="Summarize a report written by 'run'")
    show.add_argument("path")
    return parser


def _gen_mesh(args: argparse.Namespace) -> int:
    names = GENERATOR_PARAMS[args.generator]
    if len(args.params) > len(names):
        raise InvalidArgumentError(f"{args.generator} takes at most {len(names)} parameters: {', '.join(names)}")
    meshes = MeshService()
    mesh = meshes.generate(args.generator, dict(zip(names, args.params)))
    if args.out:
        meshes.save(mesh, args.out)
    else:
        sys.stdout.write(meshes.dumps(mesh))
    return EXIT_PASSED


def _run(args: argparse.Namespace) -> int:
    service = ExperimentService()
    config = ConfigService().load(args.config)
    if args.seed is not None:
        config = service.with_seed(config, args.seed)
    report = service.run(config, output_dir=args.out)
    for case in report.cases:
        status = "PASS" if case.passed else "FAIL"
        print(f"{status}  {case.name}" + (f"  ({case.error})" if case.error else ""))
    print(f"{report.experiment}: {'passed' if report.passed else 'FAILED'}")
    return EXIT_PASSED if report.passed else EXIT_FAILED


def _validate_mesh(args: argparse.Namespace) -> int:
    meshes = MeshService()
    mesh = meshes.load(args.path)
    issues = meshes.validation_issues(mesh)
    for issue in issues:
        print(f"invalid: {issue}")
    if issues:
        return EXIT_FAILED
    print(
        f"{mesh.kind}: dimension {mesh.dimension}, {mesh.n_vertices} vertices, {mesh.n_cells} cells, "
        f"{mesh.n_components} component(s), b1 = {mesh.betti_1()}"
    )
    return EXIT_PASSED


def _show_report(args: argparse.Namespace) -> int:
    with open(args.path, "r", encoding="utf-8") as fh:
        try:
            report = RunReport.model_validate(json.load(fh))
        except (ValueError, TypeError) as e:
            raise InvalidArgumentError(f"{args.path} is not a run report: {e}")
    print(f"experiment {report.experiment} (seed {report.config.experiment.seed}): "
          f"{'passed' if report.passed else 'FAILED'}")
    for case in report.cases:
        print(f"  {'PASS' if case.passed else 'FAIL'}  {case.name}")
        if case.error:
            print(f"        error: {case.error}")
        for m in case.measurements:
            mark = {True: "ok", False: "!!", None: "  "}[m.passed]
            bound = f" <= {m.threshold:.3e}" if m.threshold is not None else ""
            print(f"    {mark} {m.name:<28} {m.value: .6e}{bound}  [{m.tolerance_class}]")
    return EXIT_PASSED if report.passed else EXIT_FAILED


COMMANDS = {
    "gen-mesh": _gen_mesh,
    "run": _run,
    "validate-mesh": _validate_mesh,
    "show-report": _show_report,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line entry point.

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])

    Returns:
        0 if every assertion passed, 1 on an assertion failure, 2 on a usage,
        configuration or input error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASSED

    settings = load_settings()
    level = logging.WARNING if args.quiet else getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (LabError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
