"""Command-line interface.

Subcommands:
    test    run the Monte Carlo pipeline and write a report
    exact   run exact enumeration tests on small data
    synth   generate a synthetic dataset with known ground truth

Exit codes: 0 success, 2 input or validation error, 3 numerical
failure, 4 enumeration or redraw cap exceeded.  Errors are written to
stderr as one JSON object per failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import TestConfig, load_dataset, read_delimited, write_delimited
from .errors import (
    CapExceededError,
    IvrandError,
    MechanismError,
    PropensityError,
    RedrawLimitError,
    StatisticError,
    ValidationError,
)
from .mechanisms import MechanismSpec
from .propensity import fit_logistic, predict
from .report import DEFAULT_STATISTICS, build_report
from .synth import PRESETS, ScenarioSpec, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_CAP = 4

_STATISTIC_ALIASES = {
    "bias": "iv_bias",
    "balance": "prevalence_diff",
}


def _fail(kind: str, message: str, code: int, details=None) -> int:
    payload = {"error": kind, "message": message}
    if details:
        payload["details"] = details
    print(json.dumps(payload), file=sys.stderr)
    return code


def _default_threads() -> int:
    env = os.environ.get("IVRAND_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", help="delimited input file with a header row")
    parser.add_argument("--instrument", required=True, help="instrument column (binary)")
    parser.add_argument("--exposure", required=True, help="exposure column (binary)")
    parser.add_argument("--covariates", default=None,
                        help="comma-separated covariate columns (default: all others)")
    parser.add_argument("--categorical-covariates", default="",
                        help="comma-separated columns to expand into indicators")
    parser.add_argument("--delimiter", default=",")
    parser.add_argument("--statistic", action="append", default=None,
                        help="statistic to run (repeatable); default scmd, bias, "
                             "sqrt_mahalanobis")
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--bias-denominator", default="fixed_observed",
                        choices=["fixed_observed", "per_draw"])
    parser.add_argument("--ridge", type=float, default=0.0,
                        help="ridge penalty for the propensity fits")
    parser.add_argument("--hist-bins", default="fd",
                        help="report histogram binning (numpy rule name or count)")
    parser.add_argument("--out", default="ivrand_report.json")
    parser.add_argument("--plots-dir", default=None,
                        help="directory for plot-data tables")
    parser.add_argument("--threads", type=int, default=_default_threads())


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivrand",
        description="Randomization tests of as-if random instrument assignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="Monte Carlo randomization tests")
    _add_common_flags(p_test)
    p_test.add_argument("--mechanism", default="complete",
                        choices=["complete", "block", "bernoulli"])
    p_test.add_argument("--block-column", default=None,
                        help="column holding block labels (mechanism=block)")
    p_test.add_argument("--draws", type=int, default=10_000)

    p_exact = sub.add_parser("exact", help="exact enumeration tests (small N)")
    _add_common_flags(p_exact)
    p_exact.add_argument("--cap", type=int, default=1_000_000,
                         help="largest allowed C(N, N_T)")

    p_synth = sub.add_parser("synth", help="generate synthetic data")
    p_synth.add_argument("--scenario", default="confounded-exposure",
                         help=f"one of: {', '.join(sorted(PRESETS))}")
    p_synth.add_argument("--n", type=int, default=2_000)
    p_synth.add_argument("--k", type=int, default=5)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default="synth_data",
                         help="output prefix; writes <out>.csv and "
                              "<out>.ground_truth.json")
    return parser


def _statistics_from_args(args) -> tuple:
    if not args.statistic:
        return DEFAULT_STATISTICS
    stats = []
    for raw in args.statistic:
        name = _STATISTIC_ALIASES.get(raw, raw)
        if name not in ("prevalence_diff", "scmd", "iv_bias", "mahalanobis",
                        "sqrt_mahalanobis"):
            raise ValidationError([f"unknown statistic {raw!r}"])
        stats.append(name)
    return tuple(dict.fromkeys(stats))


def _load(args):
    covariates = None
    if args.covariates:
        covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
        skip = {args.instrument, args.exposure}
        covariates = [c for c in covariates if c not in skip]
    else:
        # default to every other column, keeping block labels out
        block_column = getattr(args, "block_column", None)
        records = read_delimited(args.data, delimiter=args.delimiter)
        if not records:
            raise ValidationError([f"{args.data}: no data rows"])
        skip = {args.instrument, args.exposure, block_column}
        covariates = [c for c in records[0] if c not in skip]
    categorical = [c.strip() for c in args.categorical_covariates.split(",")
                   if c.strip()]
    dataset = load_dataset(
        args.data,
        instrument_col=args.instrument,
        exposure_col=args.exposure,
        covariate_cols=covariates,
        categorical_cols=categorical,
        delimiter=args.delimiter,
    )
    return dataset


def _mechanism_from_args(args, dataset):
    if args.command != "test" or args.mechanism == "complete":
        return MechanismSpec(kind="complete")
    if args.mechanism == "block":
        if not args.block_column:
            raise ValidationError(["--mechanism block needs --block-column"])
        records = read_delimited(args.data, delimiter=args.delimiter)
        if args.block_column not in records[0]:
            raise ValidationError([f"missing column: {args.block_column}"])
        labels = tuple(r[args.block_column] for r in records)
        return MechanismSpec.block(labels)
    # bernoulli: propensities fitted for the instrument
    model = fit_logistic(dataset.covariates, dataset.instrument, ridge=args.ridge,
                         covariate_names=dataset.covariate_names)
    if not model.converged:
        raise PropensityError(
            "propensity fit for the bernoulli mechanism did not converge; "
            "try --ridge"
        )
    return MechanismSpec.bernoulli(predict(model, dataset.covariates))


def _parse_bins(raw):
    try:
        return int(raw)
    except (TypeError, ValueError):
        return raw


def _cmd_test(args) -> int:
    dataset = _load(args)
    statistics = _statistics_from_args(args)
    mechanism = _mechanism_from_args(args, dataset)
    config = TestConfig(
        n_draws=args.draws,
        alpha=args.alpha,
        seed=args.seed,
        bias_denominator=args.bias_denominator,
        threads=max(1, args.threads),
    )
    report = build_report(
        dataset, config, statistics=statistics, mechanism=mechanism,
        ridge=args.ridge, hist_bins=_parse_bins(args.hist_bins),
        source=args.data,
    )
    report.write(args.out)
    if args.plots_dir:
        report.write_plot_data(args.plots_dir, delimiter=args.delimiter)
    return EXIT_OK


def _cmd_exact(args) -> int:
    dataset = _load(args)
    statistics = _statistics_from_args(args)
    config = TestConfig(
        n_draws=1,
        alpha=args.alpha,
        seed=args.seed,
        bias_denominator=args.bias_denominator,
        enumeration_cap=args.cap,
        threads=max(1, args.threads),
    )
    report = build_report(
        dataset, config, statistics=statistics, mechanism="complete",
        ridge=args.ridge, hist_bins=_parse_bins(args.hist_bins),
        exact=True, source=args.data,
    )
    report.write(args.out)
    if args.plots_dir:
        report.write_plot_data(args.plots_dir, delimiter=args.delimiter)
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.scenario not in PRESETS:
        raise ValidationError([
            f"unknown scenario {args.scenario!r}; valid scenarios: "
            + ", ".join(sorted(PRESETS))
        ])
    spec = ScenarioSpec(n_units=args.n, k_covariates=args.k, seed=args.seed,
                        **PRESETS[args.scenario])
    dataset, ground_truth = generate(spec)
    data_path = f"{args.out}.csv"
    truth_path = f"{args.out}.ground_truth.json"
    write_delimited(dataset, data_path, instrument_col="instrument",
                    exposure_col="exposure")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(ground_truth, fh, indent=2)
        fh.write("\n")
    print(json.dumps({"data": data_path, "ground_truth": truth_path}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"test": _cmd_test, "exact": _cmd_exact, "synth": _cmd_synth}
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        return _fail("validation", str(exc), EXIT_INPUT, details=exc.issues)
    except CapExceededError as exc:
        return _fail("cap_exceeded",
                     f"{exc} (use the Monte Carlo 'test' command instead)",
                     EXIT_CAP)
    except RedrawLimitError as exc:
        return _fail("redraw_limit", str(exc), EXIT_CAP)
    except (PropensityError, StatisticError) as exc:
        return _fail("numerical", str(exc), EXIT_NUMERICAL)
    except MechanismError as exc:
        return _fail("mechanism", str(exc), EXIT_INPUT)
    except IvrandError as exc:
        return _fail("internal", str(exc), EXIT_NUMERICAL)
    except FileNotFoundError as exc:
        return _fail("validation", str(exc), EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
