"""Command-line interface: ``fidmix {fit,simulate,designs,oracle}``.

Every command that writes files also writes ``manifest.json`` next to
them, recording the resolved configuration needed to repeat the run.

Exit codes: 0 on success, 2 for invalid configuration or input, 3 when
the sampler fails on any data file (the other files still get their
outputs, and the manifest lists the failures), 4 when the rejection
oracle accepts nothing.

"""

import argparse
import json
import logging
import os
import sys
import time
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

from . import __version__
from .fiducial_analysis import FiducialAnalysis
from .inference import IntervalKind
from .model import InvalidData, InvalidDesign, ParameterVector
from .readers import read_intervals, read_model
from .samples import SampleMalformed, export_sample, read_sample, write_interval_report
from .simulation import (
    OracleFailure,
    StudyConfig,
    catalog,
    kolmogorov_distance,
    lookup_design,
    parameter_sets,
    read_study_config,
    rejection_oracle,
    run_study,
)
from .smc import ConfigurationError, InferenceFailure

log = logging.getLogger("fidmix")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFERENCE = 3
EXIT_ORACLE = 4


def resolve_threads(threads: int | None) -> int:
    """Thread count from the flag, then ``FIDMIX_THREADS``, then the CPU count."""
    if threads is not None:
        value = threads
    elif os.environ.get("FIDMIX_THREADS"):
        try:
            value = int(os.environ["FIDMIX_THREADS"])
        except ValueError:
            raise ConfigurationError(
                f"FIDMIX_THREADS must be an integer, got {os.environ['FIDMIX_THREADS']!r}."
            ) from None
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise ConfigurationError(f"Thread count must be at least 1, got {value}.")
    return value


def write_manifest(
    out: Path,
    command: str,
    config: dict,
    seed: int,
    start: float,
    outputs: list[Path],
    failures: Sequence[dict] = (),
) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "duration_s": time.perf_counter() - start,
        "outputs": [str(path) for path in outputs],
        "failures": list(failures),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _alpha(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {value}")
    return value


def _kinds(text: str) -> tuple[str, ...]:
    try:
        return tuple(IntervalKind(kind.strip()).value for kind in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_fit(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    threads = resolve_threads(args.threads)
    anl = (
        FiducialAnalysis.from_files(args.model, args.data)
        .run_smc(
            particles=args.particles,
            seed=args.seed,
            threshold=args.threshold,
            threads=threads,
            init_retries=args.init_retries,
        )
        .fiducial_sample(threads=threads)
        .confidence_intervals(
            alpha=args.alpha, kinds=args.kinds, selection=args.selection
        )
        .calculate()
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    failures = []
    groups = sorted(anl.groups, key=lambda group: str(group.source))
    for group in groups:
        if "failure" in group:
            print(
                f"Inference failed for {group.source} at observation "
                f"{group.failure.step}: {group.failure}",
                file=sys.stderr,
            )
            failures.append(
                {
                    "data": str(group.source),
                    "step": group.failure.step,
                    "message": str(group.failure),
                }
            )
            continue
        prefix = "" if len(groups) == 1 else f"{Path(group.source).stem}."
        sample_path = out / f"{prefix}sample.csv"
        report_path = out / f"{prefix}intervals.csv"
        export_sample(group.sample, sample_path)
        write_interval_report(group.intervals, report_path)
        outputs.extend([sample_path, report_path])
        log.info(
            "%s: %d live particles, %d resampling events",
            group.source,
            group.system.alive_count,
            len(group.system.history),
        )
    config = {
        "model": str(args.model),
        "data": str(args.data),
        "particles": args.particles,
        "alpha": args.alpha,
        "threshold": args.threshold,
        "kinds": list(args.kinds),
        "selection": args.selection,
        "init_retries": args.init_retries,
    }
    write_manifest(out, "fit", config, args.seed, start, outputs, failures)
    return EXIT_INFERENCE if failures else EXIT_OK


def _parse_params(text: str, spec) -> tuple[str, ParameterVector]:
    """A parameter-set id, or ``mu,var_1,...,var_r`` values."""
    known = parameter_sets()
    if text in known:
        return text, known[text].truth()
    try:
        values = [float(value) for value in text.split(",")]
    except ValueError:
        raise ConfigurationError(
            f"Unknown parameter set {text!r}; valid ids are {', '.join(known)}."
        ) from None
    if any(value < 0 for value in values[spec.p :]):
        raise ConfigurationError(f"Variances must be non-negative, got {text!r}.")
    p = spec.p
    return "custom", ParameterVector.from_variances(values[:p], values[p:])


def cmd_simulate(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    threads = resolve_threads(args.threads)
    if args.config is not None:
        cfg = replace(read_study_config(args.config), threads=threads)
        spec = lookup_design(cfg.design).build()
        truth = None
    else:
        if args.model is not None:
            spec = read_model(args.model)
            design = Path(args.model).stem
        elif args.design is not None:
            spec = lookup_design(args.design).build()
            design = args.design
        else:
            raise ConfigurationError("Give one of --design, --model or --config.")
        paramset, truth = _parse_params(args.params, spec)
        cfg = StudyConfig(
            design=design,
            params=paramset,
            replicates=args.reps,
            particles=args.particles,
            seed=args.seed,
            alpha=args.alpha,
            width=args.width,
            kinds=args.kinds,
            threshold=args.threshold,
            threads=threads,
            init_retries=args.init_retries,
            selection=args.selection,
        )
    report = run_study(cfg, spec=spec, truth=truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.csv"
    report.to_csv(report_path)
    config = {**cfg.as_dict(), "width": report.width}
    config.pop("threads")
    write_manifest(out, "simulate", config, cfg.seed, start, [report_path])
    return EXIT_OK


def cmd_designs(args: argparse.Namespace) -> int:
    entries = catalog() if args.id is None else [lookup_design(args.id)]
    for entry in entries:
        print(entry.describe())
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    spec = read_model(args.model)
    data = read_intervals(args.data)
    sample = rejection_oracle(
        spec, data, args.draws, args.seed, threads=resolve_threads(args.threads)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample_path = out / "oracle_sample.csv"
    export_sample(sample, sample_path)
    outputs = [sample_path]
    print(f"acceptance rate: {sample.attrs['acceptance_rate']:.6g}")
    if args.compare is not None:
        other = read_sample(args.compare)
        lines = ["param,ks_distance"]
        for param in spec.names:
            try:
                distance = kolmogorov_distance(sample, other, param)
            except ValueError as exc:
                log.warning("Skipping %s: %s", param, exc)
                distance = float("nan")
            print(f"{param}: KS distance {distance:.4f}")
            lines.append(f"{param},{distance:.17g}")
        summary_path = out / "ks_summary.csv"
        summary_path.write_text("\n".join(lines) + "\n")
        outputs.append(summary_path)
    config = {
        "model": str(args.model),
        "data": str(args.data),
        "draws": args.draws,
        "compare": None if args.compare is None else str(args.compare),
    }
    write_manifest(out, "oracle", config, args.seed, start, outputs)
    return EXIT_OK


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--particles", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--alpha", type=_alpha, default=0.05)
    parser.add_argument(
        "--threshold", type=float, default=None, help="ESS threshold (default N/2)"
    )
    parser.add_argument("--kinds", type=_kinds, default=("two-sided",))
    parser.add_argument("--selection", choices=["box", "midpoint"], default="box")
    parser.add_argument("--init-retries", type=int, default=200)
    _add_threads_flag(parser)


def _add_threads_flag(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads (or FIDMIX_THREADS)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fidmix", description="Fiducial inference for mixed models on interval data."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="fit a model to interval data")
    fit.add_argument("--model", required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True)
    _add_run_flags(fit)
    fit.set_defaults(func=cmd_fit)

    simulate = commands.add_parser("simulate", help="run a coverage study")
    source = simulate.add_mutually_exclusive_group()
    source.add_argument("--design")
    source.add_argument("--model")
    source.add_argument("--config", help="JSON study configuration")
    simulate.add_argument("--params", default="PI-5")
    simulate.add_argument("--reps", type=int, default=300)
    simulate.add_argument("--width", type=float, default=None)
    simulate.add_argument("--out", required=True)
    _add_run_flags(simulate)
    simulate.set_defaults(func=cmd_simulate)

    designs = commands.add_parser("designs", help="list the design catalog")
    designs.add_argument("--id")
    designs.set_defaults(func=cmd_designs)

    oracle = commands.add_parser("oracle", help="exact sample by rejection")
    oracle.add_argument("--model", required=True)
    oracle.add_argument("--data", required=True)
    oracle.add_argument("--draws", type=int, default=100_000)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--out", required=True)
    oracle.add_argument("--compare", help="fiducial sample CSV to compare against")
    _add_threads_flag(oracle)
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (
        ConfigurationError,
        InvalidDesign,
        InvalidData,
        SampleMalformed,
        OSError,
    ) as exc:
        print(f"fidmix {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InferenceFailure as exc:
        print(
            f"fidmix {args.command}: inference failed at observation {exc.step}: {exc}",
            file=sys.stderr,
        )
        return EXIT_INFERENCE
    except OracleFailure as exc:
        print(
            f"fidmix {args.command}: {exc} (acceptance rate {exc.acceptance_rate:.3g})",
            file=sys.stderr,
        )
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
