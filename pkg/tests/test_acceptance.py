"""Acceptance suite: one test per criterion, one printed line per criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see the PASS/FAIL
lines as they complete.  Thresholds are fixed here and in the scenario
definitions; nothing is tuned at run time.
"""

import json
import time

import numpy as np
from scipy.special import expit
from scipy.stats import kstest

from ivrand import (
    Dataset,
    MechanismSpec,
    ScenarioSpec,
    TestConfig,
    classify_case,
    compare_mechanisms,
    exact_test,
    fit_logistic,
    generate,
    mahalanobis,
    mahalanobis_from_components,
    mean_difference_covariance,
    predict,
    run_test,
)
from ivrand.mechanisms import DrawTally, draw_batch, enumerate_complete
from ivrand.report import build_report
from ivrand.rng import DrawStream
from ivrand.synth import PRESETS


def _report(number: int, passed: bool, detail: str) -> None:
    print(f"[ACCEPTANCE {number}] {'PASS' if passed else 'FAIL'}: {detail}",
          flush=True)


def test_criterion_1_exactness_oracle():
    """MC p (M=10,000) vs exact enumeration p within 0.02, 50 instances, <5 s."""
    rng = np.random.default_rng(20260811)
    start = time.perf_counter()
    worst = 0.0
    for instance in range(50):
        x = rng.standard_normal(8)
        z = np.zeros(8, dtype=np.int8)
        z[rng.permutation(8)[:4]] = 1
        d = np.zeros(8, dtype=np.int8)
        d[rng.permutation(8)[:4]] = 1
        ds = Dataset(covariates=x[:, None], covariate_names=("c",),
                     instrument=z, exposure=d)
        cfg = TestConfig(n_draws=10_000, seed=instance, chunk_draws=10_000)
        mc = run_test(ds, "instrument", cfg, statistic="scmd")
        ex = exact_test(ds, "instrument", statistic="scmd", config=cfg)
        worst = max(worst, abs(float(mc.p_value[0]) - float(ex.p_value[0])))
    elapsed = time.perf_counter() - start
    passed = worst <= 0.02 and elapsed < 5.0
    _report(1, passed,
            f"worst |p_mc - p_exact| = {worst:.4f} (<= 0.02), "
            f"runtime {elapsed:.2f}s (< 5s)")
    assert worst <= 0.02
    assert elapsed < 5.0


def test_criterion_2_validity_under_true_null():
    """True complete randomization: rejection rate in [0.03, 0.08] at
    alpha = 0.05 over 500 replications; KS uniformity at the 0.001 level."""
    start = time.perf_counter()
    rng = np.random.default_rng(12)
    pvals = []
    n, k = 200, 5
    for rep in range(500):
        x = rng.standard_normal((n, k))
        z = np.zeros(n, dtype=np.int8)
        z[rng.permutation(n)[: n // 2]] = 1
        d = (rng.random(n) < 0.5).astype(np.int8)
        d[:2] = [0, 1]
        ds = Dataset(covariates=x,
                     covariate_names=tuple(f"c{i}" for i in range(k)),
                     instrument=z, exposure=d)
        res = run_test(ds, "instrument",
                       TestConfig(n_draws=1000, seed=rep, alpha=0.05),
                       statistic="sqrt_mahalanobis")
        pvals.append(res.p_value)
    pvals = np.asarray(pvals)
    rate = float((pvals <= 0.05).mean())
    ks_p = float(kstest(pvals, "uniform").pvalue)
    elapsed = time.perf_counter() - start
    passed = 0.03 <= rate <= 0.08 and ks_p > 0.001 and elapsed < 120.0
    _report(2, passed,
            f"rejection rate {rate:.3f} (in [0.03, 0.08]), KS p {ks_p:.3f} "
            f"(> 0.001), runtime {elapsed:.1f}s (< 120s)")
    assert 0.03 <= rate <= 0.08
    assert ks_p > 0.001
    assert elapsed < 120.0


def test_criterion_3_affine_invariance():
    """100 random datasets (N=100, K=6), random affine maps with condition
    number below 1e3: relative change in M_Z at most 1e-8."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for rep in range(100):
        n, k = 100, 6
        x = rng.standard_normal((n, k))
        z = np.zeros(n, dtype=np.int8)
        z[rng.permutation(n)[: n // 2]] = 1
        base = mahalanobis(x, z).mahalanobis
        q1, _ = np.linalg.qr(rng.standard_normal((k, k)))
        q2, _ = np.linalg.qr(rng.standard_normal((k, k)))
        singular_values = 10 ** rng.uniform(-1.5, 1.5, k)
        a = q1 @ np.diag(singular_values) @ q2
        assert np.linalg.cond(a) < 1e3
        b = rng.standard_normal(k) * 10
        mapped = mahalanobis(x @ a.T + b, z).mahalanobis
        worst = max(worst, abs(mapped - base) / max(1.0, base))
    passed = worst <= 1e-8
    _report(3, passed, f"worst relative change {worst:.2e} (<= 1e-8)")
    assert worst <= 1e-8


def test_criterion_4_bias_balance_mahalanobis_identity():
    """Scaling the balance vector by a fixed scalar denominator (and its
    covariance by the square) leaves the Mahalanobis distance unchanged
    to 1e-10 relative."""
    rng = np.random.default_rng(13)
    worst = 0.0
    for rep in range(100):
        n, k = 60, 5
        x = rng.standard_normal((n, k))
        z = np.zeros(n, dtype=np.int8)
        z[rng.permutation(n)[: n // 2]] = 1
        diff = x[z == 1].mean(axis=0) - x[z == 0].mean(axis=0)
        cov = mean_difference_covariance(x, z)
        c = float(rng.uniform(0.05, 5.0)) * rng.choice([-1.0, 1.0])
        balance = mahalanobis_from_components(diff, cov).mahalanobis
        bias = mahalanobis_from_components(diff / c, cov / c**2).mahalanobis
        worst = max(worst, abs(bias - balance) / max(balance, 1e-300))
    passed = worst <= 1e-10
    _report(4, passed, f"worst relative gap {worst:.2e} (<= 1e-10)")
    assert worst <= 1e-10


def test_criterion_5_logistic_recovery():
    """N=50,000, K=3, true coefficients (-0.5, 0.8, -0.3, 0.1): recovery
    within 0.05 and score equations satisfied to 1e-6 * N."""
    rng = np.random.default_rng(17)
    n, true = 50_000, np.array([-0.5, 0.8, -0.3, 0.1])
    x = rng.standard_normal((n, 3))
    y = (rng.random(n) < expit(true[0] + x @ true[1:])).astype(int)
    model = fit_logistic(x, y)
    coef_err = float(np.abs(model.coefficients - true).max())
    xs = (x - model.centers) / model.scales
    resid = y - predict(model, x)
    score = float(max(np.abs(xs.T @ resid).max(), abs(resid.sum())))
    passed = model.converged and coef_err < 0.05 and score <= 1e-6 * n
    _report(5, passed,
            f"max coefficient error {coef_err:.4f} (< 0.05), "
            f"max |score| {score:.2e} (<= {1e-6 * n:.2g})")
    assert model.converged
    assert coef_err < 0.05
    assert score <= 1e-6 * n


def test_criterion_6_mechanism_comparison_discrimination():
    """Scenario A (Z randomized, D confounded at strength 2, N=2000):
    Case 1 with iv_closer in at least 95% of 200 replications.
    Scenario B (both equally confounded, the frozen preset): Case 4 with
    overlap above 0.5 in at least 90% of 200 replications.

    The criterion fixes no test level; alpha = 0.01 is pinned here (at
    0.05 the fail-to-reject half of Case 1 would sit exactly on the 95%
    target by construction).
    """
    reps = 200
    a_hits = 0
    for rep in range(reps):
        ds, _ = generate(ScenarioSpec(
            n_units=2000, k_covariates=5, seed=rep,
            instrument_model="randomized",
            confounding_strength=2.0, instrument_effect=1.0,
        ))
        comp = compare_mechanisms(
            ds, TestConfig(n_draws=500, seed=10_000 + rep, alpha=0.01)
        )
        a_hits += comp.case.label == "case1" and comp.iv_closer
    a_rate = a_hits / reps

    b_hits = 0
    for rep in range(reps):
        ds, _ = generate(ScenarioSpec(
            n_units=2000, k_covariates=5, seed=rep, **PRESETS["both-confounded"]
        ))
        comp = compare_mechanisms(
            ds, TestConfig(n_draws=500, seed=20_000 + rep, alpha=0.01)
        )
        b_hits += (comp.case.label == "case4"
                   and comp.iv_vs_exp.overlap_fraction > 0.5)
    b_rate = b_hits / reps
    passed = a_rate >= 0.95 and b_rate >= 0.90
    _report(6, passed,
            f"clean-IV scenario: {a_rate:.3f} (>= 0.95); "
            f"both-confounded: {b_rate:.3f} (>= 0.90)")
    assert a_rate >= 0.95
    assert b_rate >= 0.90


def test_criterion_7_sampler_correctness():
    """draw_complete matches uniform enumeration (n=5, N_T=2) to 0.005;
    draw_bernoulli marginals match the conditional 4-outcome enumeration
    for propensities (0.9, 0.1) to 0.005."""
    stream = DrawStream(seed=23)
    draws = draw_batch(MechanismSpec.complete(2), 5, stream,
                       np.arange(100_000, dtype=np.uint64))
    combos = [tuple(int(v) for v in a.values) for a in enumerate_complete(5, 2)]
    counts = {c: 0 for c in combos}
    for row in draws.tolist():
        counts[tuple(row)] += 1
    freqs = np.array([counts[c] for c in combos]) / 100_000
    complete_dev = float(np.abs(freqs - 0.1).max())

    tally = DrawTally()
    bdraws = draw_batch(MechanismSpec.bernoulli([0.9, 0.1]), 2,
                        DrawStream(seed=29),
                        np.arange(100_000, dtype=np.uint64), tally=tally)
    # accepted outcomes: (1,0) w.p. 0.81 and (0,1) w.p. 0.01 out of 0.82
    marg1 = float(bdraws[:, 0].mean())
    marg2 = float(bdraws[:, 1].mean())
    dev1 = abs(marg1 - 0.81 / 0.82)
    dev2 = abs(marg2 - 0.01 / 0.82)
    passed = complete_dev <= 0.005 and dev1 <= 0.005 and dev2 <= 0.005
    _report(7, passed,
            f"complete-draw max frequency deviation {complete_dev:.4f} "
            f"(<= 0.005); bernoulli marginal deviations {dev1:.4f}, "
            f"{dev2:.4f} (<= 0.005)")
    assert complete_dev <= 0.005
    assert dev1 <= 0.005
    assert dev2 <= 0.005


def test_criterion_8_desk_scale_performance(tmp_path):
    """Full pipeline (per-covariate + global + comparison, M = 10,000) on
    N = 13,011, K = 12 in under 60 s, with a byte-reproducible report."""
    ds, _ = generate(ScenarioSpec(
        n_units=13_011, k_covariates=12, seed=99,
        instrument_model="randomized", confounding_strength=2.0,
        instrument_effect=1.0,
    ))
    cfg = TestConfig(n_draws=10_000, seed=31, alpha=0.05)
    start = time.perf_counter()
    report = build_report(ds, cfg)
    elapsed = time.perf_counter() - start
    again = build_report(ds, cfg)
    doc_a = dict(report.document, metadata={
        k: v for k, v in report.document["metadata"].items() if k != "created_utc"
    })
    doc_b = dict(again.document, metadata={
        k: v for k, v in again.document["metadata"].items() if k != "created_utc"
    })
    identical = json.dumps(doc_a) == json.dumps(doc_b)
    passed = elapsed < 60.0 and identical
    _report(8, passed,
            f"pipeline runtime {elapsed:.1f}s (< 60s); "
            f"byte-reproducible report: {identical}")
    assert elapsed < 60.0
    assert identical


def test_criterion_9_table_mapping_verbatim():
    """The four reject/fail-to-reject combinations map verbatim onto the
    four recommendations."""
    expected = {
        (True, False): ("case1", "Use IV analysis"),
        (False, True): ("case2", "Reject IV analysis"),
        (False, False): ("case3", "Use IV analysis or exposure analysis"),
        (True, True): ("case4", "Compare balance or bias of D and Z"),
    }
    alpha = 0.05
    ok = True
    for reject_d in (True, False):
        for reject_z in (True, False):
            p_d = 0.01 if reject_d else 0.5
            p_z = 0.01 if reject_z else 0.5
            out = classify_case(p_d, p_z, alpha)
            label, rec = expected[(reject_d, reject_z)]
            ok = ok and out.label == label and out.recommendation == rec
    # boundary: p exactly alpha counts as rejection
    boundary = classify_case(alpha, 0.5, alpha)
    ok = ok and boundary.label == "case1"
    _report(9, ok, "all four recommendations reproduced verbatim "
                   "(boundary p = alpha rejects)")
    assert ok
