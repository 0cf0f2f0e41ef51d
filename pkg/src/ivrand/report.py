"""Report assembly: one JSON document plus delimited plot-data tables.

Every random quantity in the report is reproducible from the input file
and the metadata block; the only nondeterministic field is the creation
timestamp.  Plot tables carry everything needed to re-render the
standard figures (propensity histograms, SCMD dot plot, per-covariate
quantile bands, global-balance distribution overlays) without re-running
the pipeline.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .comparison import ComparisonResult, compare_mechanisms
from .data import Dataset, TestConfig
from .errors import PropensityError
from .mechanisms import MechanismSpec
from .propensity import PropensityModel, fit_logistic, predict
from .randtest import (
    TestResult,
    exact_test,
    per_covariate_quantiles,
    run_many,
)

SCHEMA_VERSION = "1"
SCMD_REFERENCE_THRESHOLD = 0.1   # rule-of-thumb annotation, never a pass/fail rule
DEFAULT_STATISTICS = ("scmd", "iv_bias", "sqrt_mahalanobis")


@dataclass
class RunReport:
    """Assembled report document and its sidecar plot tables."""

    document: dict
    plot_tables: dict[str, list[dict]]

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, allow_nan=False) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def write_plot_data(self, directory, delimiter: str = ",") -> list[str]:
        os.makedirs(directory, exist_ok=True)
        written = []
        for name, rows in self.plot_tables.items():
            path = os.path.join(directory, f"{name}.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                if not rows:
                    continue
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()),
                                        delimiter=delimiter)
                writer.writeheader()
                writer.writerows(rows)
            written.append(path)
        return written


def _num(value):
    """JSON-safe scalar: NaN/inf become None."""
    value = float(value)
    return value if np.isfinite(value) else None


def _result_dict(result: TestResult, bins="fd") -> dict:
    vector = result.covariate_names is not None
    if vector:
        per_cov = {
            name: {
                "observed": _num(result.observed[j]),
                "p_value": _num(result.p_value[j]),
                "q025": _num(result.q025[j]),
                "q975": _num(result.q975[j]),
                "draw_mean": _num(result.draw_mean[j]),
                "n_undefined": int(result.n_undefined[j]),
                "reject_at_alpha": bool(result.reject_at_alpha[j]),
            }
            for j, name in enumerate(result.covariate_names)
        }
        body = {"per_covariate": per_cov}
    else:
        body = {
            "observed": _num(result.observed),
            "p_value": _num(result.p_value),
            "q025": _num(result.q025),
            "q975": _num(result.q975),
            "draw_mean": _num(result.draw_mean),
            "n_undefined": int(result.n_undefined),
            "reject_at_alpha": bool(result.reject_at_alpha),
            "histogram": result.histogram(bins),
        }
    return {
        "target": result.target,
        "statistic": result.statistic,
        "n_draws": int(result.n_draws),
        "alpha": result.alpha,
        "seed": result.seed,
        "mechanism": result.mechanism,
        "exact": result.exact,
        "n_redraws": int(result.n_redraws),
        **body,
    }


def _model_dict(model: PropensityModel, names) -> dict:
    return {
        "converged": model.converged,
        "n_iterations": model.n_iterations,
        "deviance": _num(model.deviance),
        "separation_flag": model.separation_flag,
        "ridge": model.ridge,
        "coefficients": {
            "intercept": _num(model.intercept),
            **{name: _num(v) for name, v in zip(names, model.slopes)},
        },
    }


def _propensity_section(dataset: Dataset, ridge: float, bins) -> tuple[dict, list[dict]]:
    """Fit both models; return the report block and histogram rows."""
    section = {}
    hist_rows = []
    for label, vector in (("instrument", dataset.instrument),
                          ("exposure", dataset.exposure)):
        model = fit_logistic(dataset.covariates, vector, ridge=ridge,
                             covariate_names=dataset.covariate_names)
        clamp: list = []
        scores = predict(model, dataset.covariates, clamp_counter=clamp)
        edges = np.histogram_bin_edges(scores, bins=bins)
        hist1, _ = np.histogram(scores[vector == 1], bins=edges)
        hist0, _ = np.histogram(scores[vector == 0], bins=edges)
        section[label] = {
            "model": _model_dict(model, dataset.covariate_names),
            "n_clamped_predictions": int(clamp[0]),
            "histogram": {
                "bin_edges": [float(e) for e in edges],
                "counts_group1": [int(c) for c in hist1],
                "counts_group0": [int(c) for c in hist0],
            },
        }
        for left, right, c0, c1 in zip(edges[:-1], edges[1:], hist0, hist1):
            hist_rows.append({
                "model": label,
                "bin_left": float(left),
                "bin_right": float(right),
                "count_group0": int(c0),
                "count_group1": int(c1),
            })
    return section, hist_rows


def _comparison_dict(comp: ComparisonResult, bins) -> dict:
    def dist(draws):
        finite = draws[np.isfinite(draws)]
        counts, edges = np.histogram(finite, bins=bins)
        return {
            "q025": _num(np.quantile(finite, 0.025)),
            "q975": _num(np.quantile(finite, 0.975)),
            "mean": _num(finite.mean()),
            "n_draws": int(draws.shape[0]),
            "n_undefined": int(draws.shape[0] - finite.shape[0]),
            "histogram": {
                "bin_edges": [float(e) for e in edges],
                "counts": [int(c) for c in counts],
            },
        }

    def sep(d):
        return {
            "intervals_disjoint": d.intervals_disjoint,
            "overlap_fraction": _num(d.overlap_fraction),
            "mean_gap": _num(d.mean_gap),
        }

    return {
        "complete_randomization": dist(comp.cr_result.draws),
        "bernoulli_instrument": dist(comp.iv_bt_draws),
        "bernoulli_exposure": dist(comp.exp_bt_draws),
        "observed_sqrt_mahalanobis": {
            "instrument": _num(comp.observed_iv),
            "exposure": _num(comp.observed_exp),
        },
        "p_instrument": _num(comp.p_iv),
        "p_exposure": _num(comp.p_exp),
        "separation": {
            "instrument_vs_exposure": sep(comp.iv_vs_exp),
            "instrument_vs_benchmark": sep(comp.iv_vs_cr),
            "exposure_vs_benchmark": sep(comp.exp_vs_cr),
            "iv_closer": comp.iv_closer,
        },
        "bernoulli_redraws": {
            "instrument": comp.iv_bt_redraws,
            "exposure": comp.exp_bt_redraws,
        },
        "ridge_fallback_used": comp.ridge_fallback_used,
    }


def _mahalanobis_plot_rows(comp: ComparisonResult, bins) -> tuple[list[dict], list[dict]]:
    hist_rows = []
    for name, draws in (("complete_randomization", comp.cr_result.draws),
                        ("bernoulli_instrument", comp.iv_bt_draws),
                        ("bernoulli_exposure", comp.exp_bt_draws)):
        finite = draws[np.isfinite(draws)]
        counts, edges = np.histogram(finite, bins=bins)
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            hist_rows.append({
                "distribution": name,
                "bin_left": float(left),
                "bin_right": float(right),
                "count": int(c),
            })
    marker_rows = [
        {"series": "observed_instrument", "value": float(comp.observed_iv)},
        {"series": "observed_exposure", "value": float(comp.observed_exp)},
    ]
    for name in ("cr", "iv_bt", "exp_bt"):
        lo, hi = comp.band(name)
        marker_rows.append({"series": f"{name}_q025", "value": lo})
        marker_rows.append({"series": f"{name}_q975", "value": hi})
    return hist_rows, marker_rows


def build_report(
    dataset: Dataset,
    config: TestConfig,
    statistics=DEFAULT_STATISTICS,
    mechanism: MechanismSpec | str | None = None,
    ridge: float = 0.0,
    hist_bins="fd",
    exact: bool = False,
    source: str = "",
) -> RunReport:
    """Run the full pipeline and assemble the report document."""
    statistics = tuple(statistics)
    covariate_means = {
        name: _num(dataset.covariates[:, j].mean())
        for j, name in enumerate(dataset.covariate_names)
    }
    metadata = {
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "source": str(source),
        "seed": config.seed,
        "n_draws": config.n_draws,
        "alpha": config.alpha,
        "statistics": list(statistics),
        "mechanism": mechanism.describe() if isinstance(mechanism, MechanismSpec)
        else {"kind": mechanism or config.mechanism},
        "bias_denominator": config.bias_denominator,
        "threads": config.threads,
        "exact": exact,
    }
    document: dict = {
        "schema_version": SCHEMA_VERSION,
        "metadata": metadata,
        "dataset_summary": {
            "n_units": dataset.n_units,
            "n_covariates": dataset.n_covariates,
            "covariate_names": list(dataset.covariate_names),
            "n_treated_instrument": dataset.n_treated_instrument,
            "n_treated_exposure": dataset.n_treated_exposure,
            "covariate_means": covariate_means,
        },
    }
    tables: dict[str, list[dict]] = {}

    if exact:
        # degenerate designs (e.g. a constant covariate) must not block
        # exact tests, which never need the fitted propensities
        try:
            prop_section, prop_rows = _propensity_section(dataset, ridge, hist_bins)
        except PropensityError as err:
            prop_section, prop_rows = {"error": str(err)}, []
    else:
        prop_section, prop_rows = _propensity_section(dataset, ridge, hist_bins)
    document["propensity"] = prop_section
    tables["propensity_hist"] = prop_rows

    vector_stats = [s for s in statistics if s in ("prevalence_diff", "scmd", "iv_bias")]
    global_stats = [s for s in statistics if s in ("mahalanobis", "sqrt_mahalanobis")]

    per_covariate: dict = {}
    scmd_rows: list[dict] = []
    if exact:
        z_results = {
            s: exact_test(dataset, "instrument", statistic=s, config=config)
            for s in statistics
        }
        d_results = {
            s: exact_test(dataset, "exposure", statistic=s, config=config)
            for s in global_stats
        }
        for s in vector_stats:
            per_covariate[s] = [
                {
                    "covariate": name,
                    "observed_instrument": _num(z_results[s].observed[j]),
                    "q025": _num(z_results[s].q025[j]),
                    "q975": _num(z_results[s].q975[j]),
                    "p_instrument": _num(z_results[s].p_value[j]),
                    "n_undefined": int(z_results[s].n_undefined[j]),
                }
                for j, name in enumerate(dataset.covariate_names)
            ]
    else:
        z_results = run_many(dataset, "instrument", statistics, config, mechanism)
        d_results = (
            run_many(dataset, "exposure", tuple(global_stats), config, mechanism)
            if global_stats else {}
        )
        for s in vector_stats:
            per_covariate[s] = per_covariate_quantiles(
                dataset, "instrument", mechanism, config, statistic=s,
                result=z_results[s],
            )

    if "scmd" in per_covariate and not exact:
        for row in per_covariate["scmd"]:
            scmd_rows.append({
                "covariate": row["covariate"],
                "scmd_instrument": row["observed_instrument"],
                "scmd_exposure": row["observed_exposure"],
                "reference_threshold": SCMD_REFERENCE_THRESHOLD,
            })
    document["scmd_table"] = {
        "reference_threshold": SCMD_REFERENCE_THRESHOLD,
        "rows": scmd_rows,
    }
    tables["scmd_dotplot"] = scmd_rows
    document["per_covariate"] = {
        s: per_covariate[s] for s in vector_stats
    }
    for s in vector_stats:
        tables[f"per_covariate_{s}"] = per_covariate[s]

    document["global"] = {
        "instrument": {
            s: _result_dict(z_results[s], hist_bins) for s in global_stats
        },
        "exposure": {
            s: _result_dict(d_results[s], hist_bins) for s in global_stats
        },
    }

    if exact:
        document["comparison"] = None
        document["case"] = None
    else:
        cr_for_comparison = None
        mech_kind = mechanism.kind if isinstance(mechanism, MechanismSpec) else (
            mechanism or config.mechanism
        )
        if mech_kind == "complete" and "sqrt_mahalanobis" in z_results:
            cr_for_comparison = z_results["sqrt_mahalanobis"]
        comp = compare_mechanisms(dataset, config, ridge=ridge,
                                  cr_result=cr_for_comparison)
        document["comparison"] = _comparison_dict(comp, hist_bins)
        document["case"] = {
            "label": comp.case.label,
            "recommendation": comp.case.recommendation,
            "reject_instrument": comp.case.reject_instrument,
            "reject_exposure": comp.case.reject_exposure,
            "p_instrument": _num(comp.p_iv),
            "p_exposure": _num(comp.p_exp),
            "alpha": config.alpha,
        }
        md_hist, md_markers = _mahalanobis_plot_rows(comp, hist_bins)
        tables["mahalanobis_hist"] = md_hist
        tables["mahalanobis_observed"] = md_markers

    return RunReport(document=document, plot_tables=tables)
