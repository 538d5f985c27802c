"""Command-line entry point: ``otseries <subcommand> --config <path> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .exceptions import ConfigError, NotConvergedError, OTSeriesError, ValidationError
from .pipeline import DEFAULTS, STAGES, StageFailed, load_config, render_config, run_pipeline

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3, 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NotConvergedError):
        return EXIT_CONVERGENCE
    if isinstance(exc, ValidationError):
        return EXIT_DATA
    return EXIT_ERROR


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    p.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    p.add_argument("--out", help="output directory (overrides run.output)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; may be repeated")
    p.add_argument("-q", "--quiet", action="store_true", help="only report errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otseries", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "validate and filter the input tables",
        "embed": "build rank point clouds per mobility variant",
        "dist": "pairwise Wasserstein distance matrices",
        "cluster": "Ward dendrograms, flat cuts and seriation",
        "compare": "partition graph and spatial statistics",
        "bary": "per-cluster barycenters",
        "analyze": "random forest and Shapley importance",
        "run": "all stages",
    }
    for name in (*STAGES, "run"):
        _common(sub.add_parser(name, help=helps[name]))
    synth = sub.add_parser("synth", help="write a synthetic fixture with a matching config")
    synth.add_argument("--dir", required=True, help="directory for the fixture files")
    synth.add_argument("--n-cities", type=int, default=30)
    synth.add_argument("--n-days", type=int, default=92)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--n-clusters", type=int, default=3)
    return parser


def _synth(args) -> int:
    from .data import write_covariates, write_timeseries
    from .synthetic import synthetic_cities

    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    records, rows, regime_of = synthetic_cities(args.n_cities, args.n_days, args.seed)
    write_timeseries(records, out / "cities.csv")
    write_covariates(rows, out / "covariates.csv")
    (out / "regimes.csv").write_text(
        "city_id,regime\n" + "".join(f"{k},{v}\n" for k, v in regime_of.items()), encoding="utf-8"
    )
    values = {sec: dict(v) for sec, v in DEFAULTS.items()}
    values["input"].update(timeseries="cities.csv", covariates="covariates.csv")
    values["clustering"]["n_clusters"] = args.n_clusters
    values["run"]["seed"] = args.seed
    (out / "config.toml").write_text(render_config(values), encoding="utf-8")
    print(f"wrote fixture for {len(records)} cities to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        return _synth(args)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    logging.getLogger("otseries").setLevel(logging.ERROR if args.quiet else logging.INFO)
    try:
        flags = {"threads": args.threads, "seed": args.seed,
                 "output": str(Path(args.out).resolve()) if args.out else None}
        cfg = load_config(args.config, args.overrides, **flags)
        until = STAGES[-1] if args.command == "run" else args.command
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            run_pipeline(cfg, until)
    except StageFailed as exc:
        print(f"otseries: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return _exit_code(exc.cause)
    except OTSeriesError as exc:
        print(f"otseries: {exc}", file=sys.stderr)
        return _exit_code(exc)
    if not args.quiet:
        print(cfg.output / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
