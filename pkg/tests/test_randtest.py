"""Randomization-test engine: p-values, exactness, determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivrand import (
    Dataset,
    MechanismSpec,
    StatisticError,
    TestConfig,
    exact_test,
    iv_bias,
    mahalanobis,
    per_covariate_quantiles,
    prevalence_difference,
    pvalue,
    run_many,
    run_test,
    scmd,
)
from ivrand.mechanisms import draw_batch
from ivrand.randtest import _Evaluator
from ivrand.rng import DrawStream


def _dataset(n=24, k=3, seed=0, confounded=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k))
    z = np.zeros(n, dtype=np.int8)
    z[rng.permutation(n)[: n // 2]] = 1
    if confounded:
        z = (rng.random(n) < 1 / (1 + np.exp(-1.5 * x[:, 0]))).astype(np.int8)
        z[:2] = [0, 1]
    d = (rng.random(n) < 0.3 + 0.4 * z).astype(np.int8)
    d[:2] = [0, 1]
    return Dataset(
        covariates=x,
        covariate_names=tuple(f"c{i}" for i in range(k)),
        instrument=z,
        exposure=d,
    )


class TestPvalue:
    def test_zero_observed_gives_one(self):
        assert pvalue(0.0, [0.5, -1.0, 2.0]) == 1.0

    def test_minimal_attainable(self):
        draws = list(np.linspace(0.1, 1.0, 10))
        assert pvalue(5.0, draws) == pytest.approx(1 / 11)

    def test_direct_count(self):
        assert pvalue(2.5, [1, 2, 3, 4]) == pytest.approx(0.6)

    def test_empty_draws_error(self):
        with pytest.raises(StatisticError):
            pvalue(1.0, [])

    def test_nan_draws_excluded(self):
        assert pvalue(2.5, [1, 2, 3, 4, np.nan]) == pytest.approx(0.6)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=40),
        st.floats(0, 40),
        st.floats(0.1, 10),
    )
    def test_monotone_in_observed(self, draws, t, bump):
        assert pvalue(t + bump, draws) <= pvalue(t, draws)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(-40, 40))
    def test_bounds(self, draws, t):
        p = pvalue(t, draws)
        assert 1 / (len(draws) + 1) <= p <= 1.0


class TestRunTest:
    def test_constant_covariate_p_one(self):
        rng = np.random.default_rng(1)
        z = np.array([1, 0] * 8, dtype=np.int8)
        ds = Dataset(
            covariates=np.full((16, 1), 3.25),
            covariate_names=("const",),
            instrument=z,
            exposure=np.roll(z, 1),
        )
        res = run_test(ds, "instrument", TestConfig(n_draws=200, seed=3),
                       statistic="scmd")
        assert res.p_value[0] == 1.0
        assert res.observed[0] == 0.0

    def test_reproducibility_bit_identical(self):
        ds = _dataset(seed=2)
        cfg = TestConfig(n_draws=500, seed=11)
        a = run_test(ds, "instrument", cfg, statistic="scmd")
        b = run_test(ds, "instrument", cfg, statistic="scmd")
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.p_value, b.p_value)
        assert np.array_equal(a.observed, b.observed)

    def test_threads_do_not_change_results(self):
        ds = _dataset(n=60, seed=3)
        base = run_test(ds, "instrument",
                        TestConfig(n_draws=700, seed=5, chunk_draws=128),
                        statistic="sqrt_mahalanobis")
        threaded = run_test(ds, "instrument",
                            TestConfig(n_draws=700, seed=5, chunk_draws=128,
                                       threads=4),
                            statistic="sqrt_mahalanobis")
        assert np.array_equal(base.draws, threaded.draws)
        assert base.p_value == threaded.p_value

    def test_p_lower_bound_attained(self):
        # a covariate that separates groups maximally drives p to the floor
        n = 30
        x = np.zeros((n, 1))
        z = np.zeros(n, dtype=np.int8)
        z[:15] = 1
        x[:15, 0] = 100.0
        x[15:, 0] = -100.0
        x[:, 0] += np.linspace(0, 1, n)  # break ties away from lattice
        d = np.roll(z, 1)
        ds = Dataset(covariates=x, covariate_names=("s",), instrument=z, exposure=d)
        m = 400
        res = run_test(ds, "instrument", TestConfig(n_draws=m, seed=7),
                       statistic="prevalence_diff")
        assert res.p_value[0] >= 1 / (m + 1)

    def test_mahalanobis_right_tail(self):
        ds = _dataset(seed=4)
        res = run_test(ds, "instrument", TestConfig(n_draws=300, seed=9),
                       statistic="mahalanobis")
        assert (res.draws >= 0).all()
        assert res.n_undefined == 0

    def test_shared_draw_set_across_statistics(self):
        ds = _dataset(seed=5)
        cfg = TestConfig(n_draws=400, seed=13)
        bundle = run_many(ds, "instrument", ("scmd", "sqrt_mahalanobis"), cfg)
        alone = run_test(ds, "instrument", cfg, statistic="scmd")
        assert np.array_equal(bundle["scmd"].draws, alone.draws)

    def test_exposure_target_uses_own_count(self):
        ds = _dataset(seed=6)
        res = run_test(ds, "exposure", TestConfig(n_draws=100, seed=1),
                       statistic="scmd")
        assert res.mechanism["n_treated"] == ds.n_treated_exposure

    def test_per_draw_bias_undefined_draws_excluded(self):
        # an even split makes zero exposure differences across permuted
        # groups likely (2 of the 4 exposed units treated)
        x = np.arange(8, dtype=np.float64)[:, None]
        z = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.int8)
        d = np.array([1, 1, 1, 0, 1, 0, 0, 0], dtype=np.int8)
        ds = Dataset(covariates=x, covariate_names=("c",), instrument=z, exposure=d)
        cfg = TestConfig(n_draws=500, seed=21, bias_denominator="per_draw")
        res = run_test(ds, "instrument", cfg, statistic="iv_bias")
        assert int(res.n_undefined[0]) > 0
        count = np.isfinite(res.draws[:, 0]).sum()
        assert res.p_value[0] >= 1 / (count + 1)

    def test_fixed_bias_denominator_matches_manual(self):
        ds = _dataset(seed=7)
        cfg = TestConfig(n_draws=50, seed=2)
        res = run_test(ds, "instrument", cfg, statistic="iv_bias")
        strength = prevalence_difference(
            ds.exposure.astype(float), ds.instrument
        )
        manual = np.array([
            prevalence_difference(ds.covariates[:, j], ds.instrument) / strength
            for j in range(3)
        ])
        np.testing.assert_allclose(res.observed, manual, rtol=1e-9)

    def test_zero_strength_fixed_bias_errors(self):
        x = np.random.default_rng(8).standard_normal((8, 1))
        z = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.int8)
        d = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=np.int8)
        ds = Dataset(covariates=x, covariate_names=("c",), instrument=z, exposure=d)
        with pytest.raises(StatisticError, match="zero"):
            run_test(ds, "instrument", TestConfig(n_draws=50, seed=1),
                     statistic="iv_bias")


class TestBatchAgainstScalarOps:
    """The vectorized engine must agree with the scalar definitions."""

    def test_all_statistics_agree_per_draw(self):
        ds = _dataset(n=40, k=4, seed=9)
        evaluator = _Evaluator(ds, ("prevalence_diff", "scmd", "iv_bias",
                                    "mahalanobis", "sqrt_mahalanobis"),
                               "per_draw", None)
        stream = DrawStream(seed=17, domain=0)
        draws = draw_batch(MechanismSpec.complete(20), 40, stream,
                           np.arange(50, dtype=np.uint64))
        batch = evaluator(draws.astype(np.float64))
        for m in range(50):
            z = draws[m]
            for j in range(4):
                col = ds.covariates[:, j]
                assert batch["prevalence_diff"][m, j] == pytest.approx(
                    prevalence_difference(col, z), rel=1e-9, abs=1e-12
                )
                assert batch["scmd"][m, j] == pytest.approx(
                    scmd(col, z), rel=1e-9, abs=1e-12
                )
                expected_bias = iv_bias(col, z, ds.exposure)
                if np.isnan(expected_bias):
                    assert np.isnan(batch["iv_bias"][m, j])
                else:
                    assert batch["iv_bias"][m, j] == pytest.approx(
                        expected_bias, rel=1e-9, abs=1e-12
                    )
            gb = mahalanobis(ds.covariates, z)
            assert batch["mahalanobis"][m] == pytest.approx(
                gb.mahalanobis, rel=1e-9
            )
            assert batch["sqrt_mahalanobis"][m] == pytest.approx(
                gb.sqrt_mahalanobis, rel=1e-9
            )


class TestExactTest:
    def test_hand_enumeration_oracle(self):
        """x = (10,10,0,0), z = (1,1,0,0): only z and its complement reach
        the maximal |difference|, so p = 2/6."""
        x = np.array([10.0, 10.0, 0.0, 0.0])[:, None]
        z = np.array([1, 1, 0, 0], dtype=np.int8)
        d = np.array([1, 0, 1, 0], dtype=np.int8)
        ds = Dataset(covariates=x, covariate_names=("c",), instrument=z, exposure=d)
        res = exact_test(ds, "instrument", statistic="prevalence_diff")
        assert res.exact
        assert res.n_draws == 6
        assert res.p_value[0] == pytest.approx(2 / 6)

    def test_constant_covariate_p_one(self):
        x = np.full((6, 1), 2.0)
        z = np.array([1, 1, 1, 0, 0, 0], dtype=np.int8)
        ds = Dataset(covariates=x, covariate_names=("c",), instrument=z,
                     exposure=np.roll(z, 1))
        res = exact_test(ds, "instrument", statistic="scmd")
        assert res.p_value[0] == 1.0

    def test_monte_carlo_converges_to_exact(self):
        ds = _dataset(n=10, k=1, seed=10)
        cfg = TestConfig(n_draws=100_000, seed=3, chunk_draws=20_000)
        mc = run_test(ds, "instrument", cfg, statistic="scmd")
        ex = exact_test(ds, "instrument", statistic="scmd", config=cfg)
        assert abs(float(mc.p_value[0]) - float(ex.p_value[0])) <= 0.01

    def test_exact_p_floor_is_one_over_c(self):
        x = np.array([100.0, 90.0, 1.0, 2.0, 3.0, 4.0])[:, None]
        z = np.array([1, 1, 0, 0, 0, 0], dtype=np.int8)
        ds = Dataset(covariates=x, covariate_names=("c",), instrument=z,
                     exposure=np.roll(z, 3))
        res = exact_test(ds, "instrument", statistic="prevalence_diff")
        assert res.p_value[0] >= 1 / 15

    def test_cap(self):
        ds = _dataset(n=40, k=1, seed=11)
        from ivrand import CapExceededError

        with pytest.raises(CapExceededError):
            exact_test(ds, "instrument", statistic="scmd",
                       config=TestConfig(n_draws=1, enumeration_cap=1_000_000))


class TestPerCovariateQuantiles:
    def test_band_endpoints_match_draw_quantiles(self):
        ds = _dataset(seed=12)
        cfg = TestConfig(n_draws=600, seed=19)
        rows = per_covariate_quantiles(ds, "instrument", None, cfg, "scmd")
        res = run_test(ds, "instrument", cfg, statistic="scmd")
        for j, row in enumerate(rows):
            assert row["q025"] == np.nanquantile(res.draws[:, j], 0.025)
            assert row["q975"] == np.nanquantile(res.draws[:, j], 0.975)

    def test_bands_roughly_symmetric_under_null(self):
        ds = _dataset(n=80, seed=13)
        cfg = TestConfig(n_draws=3000, seed=23)
        rows = per_covariate_quantiles(ds, "instrument", None, cfg, "scmd")
        for row in rows:
            width = row["q975"] - row["q025"]
            assert abs(row["q975"] + row["q025"]) < 0.25 * width

    def test_observed_inside_band_consistent_with_quantile_check(self):
        ds = _dataset(seed=14)
        cfg = TestConfig(n_draws=800, seed=29)
        rows = per_covariate_quantiles(ds, "instrument", None, cfg, "scmd")
        res = run_test(ds, "instrument", cfg, statistic="scmd")
        for j, row in enumerate(rows):
            inside = row["q025"] <= row["observed_instrument"] <= row["q975"]
            draws = res.draws[:, j]
            lo, hi = np.nanquantile(draws, (0.025, 0.975))
            assert inside == (lo <= res.observed[j] <= hi)

    def test_both_observed_vectors_reported(self):
        ds = _dataset(seed=15)
        cfg = TestConfig(n_draws=200, seed=31)
        rows = per_covariate_quantiles(ds, "instrument", None, cfg, "iv_bias")
        for j, row in enumerate(rows):
            # exposure bias equals exposure balance (its own denominator is 1)
            assert row["observed_exposure"] == pytest.approx(
                prevalence_difference(ds.covariates[:, j], ds.exposure),
                rel=1e-9,
            )
            assert row["p_instrument"] is not None

    def test_reuse_precomputed_result(self):
        ds = _dataset(seed=16)
        cfg = TestConfig(n_draws=300, seed=37)
        res = run_test(ds, "instrument", cfg, statistic="scmd")
        rows = per_covariate_quantiles(ds, "instrument", None, cfg, "scmd",
                                       result=res)
        fresh = per_covariate_quantiles(ds, "instrument", None, cfg, "scmd")
        assert rows == fresh
