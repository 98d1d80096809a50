import math
import warnings

import numpy as np
import pytest

from saekit.covariates import AreaCovariateTable
from saekit.errors import InputError, ModelComparisonWarning
from saekit.fayherriot import (
    DEFAULT_MODEL_FORMULAS,
    AreaLevelDataset,
    FHFit,
    aic,
    dataset_from_table,
    eblup,
    fit_fh,
    fit_model_suite,
    prasad_rao_mse,
    profile_loglik,
    profile_loglik_grad,
)
from saekit.simulate import SimScenario, generate_fh_data, scenario_design


def make_dataset(d=12, p=2, sigma2_u=1.0, seed=0, sigma2_lo=0.5, sigma2_hi=2.0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(d), rng.normal(size=(d, p - 1))]) if p > 1 else np.ones((d, 1))
    beta = rng.normal(size=p)
    s2 = rng.uniform(sigma2_lo, sigma2_hi, d)
    y = X @ beta + rng.normal(0.0, math.sqrt(sigma2_u), d) + rng.normal(0.0, np.sqrt(s2))
    return AreaLevelDataset([f"d{i}" for i in range(d)], y, s2, X)


def manual_fit(sigma2_u, data):
    """FHFit at a pinned variance component, for limit-case checks."""
    v = sigma2_u + data.sigma2_d
    w = 1.0 / v
    Xw = data.X * w[:, None]
    beta = np.linalg.solve(data.X.T @ Xw, Xw.T @ data.y)
    return FHFit(
        beta_hat=beta,
        sigma2_u_hat=sigma2_u,
        gamma=sigma2_u / v,
        loglik=0.0,
        aic=0.0,
        avar_sigma2_u=2.0 / float(np.sum(1.0 / v**2)),
        method="ml",
        n_iter=0,
        converged=True,
        boundary=(sigma2_u == 0.0),
    )


class TestDatasetValidation:
    def test_rank_deficient_design_rejected(self):
        x = np.arange(5.0)
        X = np.column_stack([np.ones(5), x, 2.0 * x])
        with pytest.raises(InputError, match="rank deficient"):
            AreaLevelDataset(list("abcde"), np.zeros(5), np.ones(5), X)

    def test_nonpositive_variances_rejected(self):
        with pytest.raises(InputError, match="positive"):
            AreaLevelDataset(["a", "b", "c"], np.zeros(3), np.array([1.0, 0.0, 1.0]), np.ones((3, 1)))

    def test_needs_more_domains_than_params(self):
        with pytest.raises(InputError, match="more domains"):
            AreaLevelDataset(
                ["a", "b"], np.zeros(2), np.ones(2), np.column_stack([np.ones(2), [0.0, 1.0]])
            )


class TestFit:
    def test_noiseless_data_pins_variance_at_zero(self):
        rng = np.random.default_rng(1)
        d = 15
        X = np.column_stack([np.ones(d), rng.normal(size=d)])
        y = X @ np.array([2.0, -1.0])
        data = AreaLevelDataset([str(i) for i in range(d)], y, np.full(d, 0.5), X)
        for method in ("reml", "ml", "fh_moment"):
            fit = fit_fh(data, method)
            assert fit.sigma2_u_hat == 0.0
            assert fit.boundary

    def test_pure_noise_case_gives_gls_weights(self):
        # y has no area effect: sigma2_u lands on the boundary and beta
        # equals weighted least squares with weights 1/sigma2_d
        rng = np.random.default_rng(42)
        d = 30
        X = np.column_stack([np.ones(d), rng.normal(size=d)])
        beta_true = np.array([1.0, 2.0])
        s2 = rng.uniform(0.5, 2.0, d)
        y = X @ beta_true + rng.normal(0.0, 0.05 * np.sqrt(s2))
        data = AreaLevelDataset([str(i) for i in range(d)], y, s2, X)
        fit = fit_fh(data, "ml")
        assert fit.sigma2_u_hat == 0.0
        w = 1.0 / s2
        Xw = X * w[:, None]
        beta_gls = np.linalg.solve(X.T @ Xw, Xw.T @ y)
        assert fit.beta_hat == pytest.approx(beta_gls, rel=1e-12)

    @pytest.mark.parametrize("method", ["reml", "ml"])
    def test_local_optimality_probe(self, method):
        for seed in range(25):
            data = make_dataset(d=int(10 + seed % 20), seed=seed)
            fit = fit_fh(data, method)
            ll_hat = profile_loglik(fit.sigma2_u_hat, data, method)
            step = 0.01 * (fit.sigma2_u_hat + 1.0)
            slack = 1e-12 * max(1.0, abs(ll_hat))
            assert ll_hat + slack >= profile_loglik(fit.sigma2_u_hat + step, data, method)
            down = fit.sigma2_u_hat - step
            if down >= 0.0:
                assert ll_hat + slack >= profile_loglik(down, data, method)

    def test_gamma_within_bounds(self):
        for seed in range(10):
            data = make_dataset(seed=seed)
            fit = fit_fh(data)
            assert (fit.gamma >= 0.0).all()
            assert (fit.gamma < 1.0).all()

    def test_estimator_coverage_against_avar(self):
        # At the truth, roughly 95% of estimates should land inside the
        # truth-centered interval with the analytic asymptotic variance.
        sc = SimScenario(
            n_domains=19,
            beta_true=(1.0, 2.0),
            sigma2_u_true=1.0,
            sigma2_d=(0.5, 2.0),
            replicates=500,
            seed=20240501,
        )
        _, s2 = scenario_design(sc)
        half = 1.96 * math.sqrt(2.0 / float(np.sum(1.0 / (1.0 + s2) ** 2)))
        inside = 0
        for r in range(sc.replicates):
            data, _ = generate_fh_data(sc, r)
            est = fit_fh(data, "reml").sigma2_u_hat
            inside += 1.0 - half <= est <= 1.0 + half
        assert inside / sc.replicates >= 0.90

    def test_moment_and_ml_agree_at_large_d(self):
        sc = SimScenario(
            n_domains=200,
            beta_true=(1.0, 2.0),
            sigma2_u_true=1.0,
            sigma2_d=(0.5, 2.0),
            replicates=40,
            seed=99,
        )
        diffs = []
        for r in range(sc.replicates):
            data, _ = generate_fh_data(sc, r)
            diffs.append(
                abs(fit_fh(data, "ml").sigma2_u_hat - fit_fh(data, "fh_moment").sigma2_u_hat)
            )
        assert np.mean(diffs) < 0.10 * sc.sigma2_u_true

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="method"):
            fit_fh(make_dataset(), "bayes")


class TestLikelihood:
    @pytest.mark.parametrize("method", ["reml", "ml"])
    def test_gradient_matches_central_differences(self, method):
        rng = np.random.default_rng(8)
        for _ in range(30):
            data = make_dataset(d=int(rng.integers(6, 40)), p=int(rng.integers(1, 5)), seed=int(rng.integers(1e6)))
            s = float(rng.uniform(0.0, 3.0))
            g = profile_loglik_grad(s, data, method)
            h = 1e-5 * (s + 1.0)
            lo = max(s - h, 0.0)
            fd = (profile_loglik(s + h, data, method) - profile_loglik(lo, data, method)) / (s + h - lo)
            assert g == pytest.approx(fd, rel=1e-6)

    def test_loglik_location_shift_invariance_of_optimum(self):
        data = make_dataset(seed=3)
        fit = fit_fh(data, "reml")
        shifted = AreaLevelDataset(
            data.domain_ids, data.y + 1000.0, data.sigma2_d, data.X
        )
        fit2 = fit_fh(shifted, "reml")
        assert fit2.sigma2_u_hat == pytest.approx(fit.sigma2_u_hat, rel=1e-6, abs=1e-10)
        assert fit2.gamma == pytest.approx(fit.gamma, rel=1e-6)

    def test_rejects_negative_variance_component(self):
        data = make_dataset()
        with pytest.raises(ValueError):
            profile_loglik(-0.5, data)


class TestEblup:
    def test_zero_variance_component_gives_synthetic(self):
        data = make_dataset(seed=5)
        fit = manual_fit(0.0, data)
        res = eblup(fit, data)
        assert res.eblup == pytest.approx(res.synthetic, rel=1e-14)

    def test_tiny_sampling_variance_tracks_direct(self):
        data = make_dataset(seed=6)
        tiny = data.sigma2_d.copy()
        tiny[0] = 1e-12
        data2 = AreaLevelDataset(data.domain_ids, data.y, tiny, data.X)
        fit = manual_fit(1.7, data2)
        res = eblup(fit, data2)
        assert res.eblup[0] == pytest.approx(data2.y[0], rel=1e-10)

    def test_equal_variances_give_midpoint(self):
        data = make_dataset(seed=7)
        s = float(data.sigma2_d[3])
        fit = manual_fit(s, data)
        res = eblup(fit, data)
        expected = 0.5 * (data.y[3] + res.synthetic[3])
        assert res.eblup[3] == pytest.approx(expected, rel=1e-12)

    def test_convexity_bound_on_random_fits(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            data = make_dataset(
                d=int(rng.integers(5, 51)), p=int(rng.integers(1, 5)), seed=int(rng.integers(1e6))
            )
            fit = fit_fh(data, "reml")
            res = eblup(fit, data)
            lo = np.minimum(data.y, res.synthetic)
            hi = np.maximum(data.y, res.synthetic)
            assert (res.eblup >= lo).all()
            assert (res.eblup <= hi).all()


class TestPrasadRao:
    def test_zero_variance_component_kills_g1(self):
        data = make_dataset(seed=8)
        res = prasad_rao_mse(manual_fit(0.0, data), data)
        assert np.all(res.g1 == 0.0)

    def test_equal_variance_closed_form_avar(self):
        d = 20
        rng = np.random.default_rng(9)
        X = np.column_stack([np.ones(d), rng.normal(size=d)])
        s2 = np.full(d, 1.3)
        y = X @ [1.0, 1.0] + rng.normal(0, 1, d)
        data = AreaLevelDataset([str(i) for i in range(d)], y, s2, X)
        fit = fit_fh(data, "reml")
        expected = 2.0 * (fit.sigma2_u_hat + 1.3) ** 2 / d
        assert fit.avar_sigma2_u == pytest.approx(expected, rel=1e-12)

    def test_component_identity_and_signs(self):
        for seed in range(10):
            data = make_dataset(seed=seed)
            fit = fit_fh(data, "reml")
            res = prasad_rao_mse(fit, data)
            assert res.mse == pytest.approx(res.g1 + res.g2 + 2.0 * res.g3, rel=1e-12)
            assert (res.g1 >= 0).all() and (res.g2 >= 0).all() and (res.g3 >= 0).all()

    def test_location_equivariance(self):
        data = make_dataset(seed=11)
        fit = fit_fh(data, "reml")
        res = prasad_rao_mse(fit, data)
        shifted = AreaLevelDataset(data.domain_ids, data.y + 500.0, data.sigma2_d, data.X)
        fit2 = fit_fh(shifted, "reml")
        res2 = prasad_rao_mse(fit2, shifted)
        assert res2.eblup == pytest.approx(res.eblup + 500.0, rel=1e-9)
        assert fit2.sigma2_u_hat == pytest.approx(fit.sigma2_u_hat, rel=1e-6, abs=1e-12)
        assert res2.g1 == pytest.approx(res.g1, rel=1e-6)
        assert res2.g3 == pytest.approx(res.g3, rel=1e-6)

    def test_scale_equivariance(self):
        base = make_dataset(seed=12)
        # keep responses positive so relative errors stay defined
        data = AreaLevelDataset(base.domain_ids, base.y + 50.0, base.sigma2_d, base.X)
        fit = fit_fh(data, "reml")
        res = prasad_rao_mse(fit, data)
        k = 250.0
        scaled = AreaLevelDataset(data.domain_ids, k * data.y, k**2 * data.sigma2_d, data.X)
        fit2 = fit_fh(scaled, "reml")
        res2 = prasad_rao_mse(fit2, scaled)
        assert fit2.sigma2_u_hat == pytest.approx(k**2 * fit.sigma2_u_hat, rel=1e-6)
        assert res2.eblup == pytest.approx(k * res.eblup, rel=1e-6)
        assert res2.mse == pytest.approx(k**2 * res.mse, rel=1e-5)
        assert res2.eer_eblup == pytest.approx(res.eer_eblup, rel=1e-5)


class TestAic:
    def test_formula(self):
        data = make_dataset(seed=13)
        fit = fit_fh(data, "ml")
        assert aic(fit) == pytest.approx(-2.0 * fit.loglik + 2.0 * (data.n_params + 1), rel=1e-15)

    def test_nested_models_increase_loglik(self):
        rng = np.random.default_rng(14)
        d = 25
        x1 = rng.normal(size=d)
        x2 = rng.normal(size=d)
        s2 = rng.uniform(0.5, 1.5, d)
        y = 1.0 + 2.0 * x1 + 0.5 * x2 + rng.normal(0, 1, d) + rng.normal(0, np.sqrt(s2))
        ids = [str(i) for i in range(d)]
        small = AreaLevelDataset(ids, y, s2, np.column_stack([np.ones(d), x1]))
        big = AreaLevelDataset(ids, y, s2, np.column_stack([np.ones(d), x1, x2]))
        assert fit_fh(big, "ml").loglik >= fit_fh(small, "ml").loglik - 1e-9

    def test_informative_covariate_lowers_aic(self):
        rng = np.random.default_rng(15)
        wins = 0
        for rep in range(20):
            d = 25
            x = rng.normal(size=d)
            s2 = rng.uniform(0.5, 1.0, d)
            y = 1.0 + 3.0 * x + rng.normal(0, 0.5, d) + rng.normal(0, np.sqrt(s2))
            ids = [str(i) for i in range(d)]
            null = AreaLevelDataset(ids, y, s2, np.ones((d, 1)))
            full = AreaLevelDataset(ids, y, s2, np.column_stack([np.ones(d), x]))
            wins += fit_fh(full, "ml").aic < fit_fh(null, "ml").aic
        assert wins >= 18


class TestModelSuite:
    def make_table(self, seed=16, d=19):
        rng = np.random.default_rng(seed)
        t = AreaCovariateTable(domain_ids=[f"d{i}" for i in range(d)])
        log_ri = rng.normal(size=d)
        zeta = rng.normal(size=d)
        s2 = rng.uniform(0.5, 1.0, d)
        y = 1.0 + 1.5 * log_ri + 1.5 * zeta + rng.normal(0, 0.7, d) + rng.normal(0, np.sqrt(s2))
        t.add_column("log_ri", log_ri)
        t.add_column("zeta", zeta)
        t.add_column("sigma2_d", s2)
        t.add_column("y", y)
        return t

    def test_interaction_model_has_four_params(self):
        table = self.make_table()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelComparisonWarning)
            suite = fit_model_suite(table, method="reml")
        model4 = next(m for m in suite if m.label == "model4")
        assert model4.dataset.n_params == 4
        assert model4.dataset.column_names == ["intercept", "log_ri", "zeta", "log_ri:zeta"]

    def test_ranked_by_aic(self):
        suite = fit_model_suite(self.make_table(), method="ml")
        aics = [m.fit.aic for m in suite]
        assert aics == sorted(aics)

    def test_duplicated_covariate_rank_deficiency(self):
        table = self.make_table()
        table.add_column("log_ri_copy", table.column("log_ri"))
        with pytest.raises(InputError, match="rank deficient"):
            fit_model_suite(table, formulas={"dup": "y ~ log_ri + log_ri_copy"}, method="ml")

    def test_missing_covariate_column(self):
        with pytest.raises(InputError, match="missing columns"):
            fit_model_suite(self.make_table(), formulas={"bad": "y ~ nonexistent"}, method="ml")

    def test_reml_comparison_warns(self):
        with pytest.warns(ModelComparisonWarning):
            fit_model_suite(self.make_table(), method="reml")

    def test_ml_comparison_does_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ModelComparisonWarning)
            fit_model_suite(self.make_table(), method="ml")

    def test_true_model_usually_wins(self):
        from saekit.simulate import model_selection_counts

        sc = SimScenario(
            n_domains=19,
            beta_true=(1.0, 1.5, 1.5),
            sigma2_u_true=0.5,
            sigma2_d=(0.5, 1.0),
            replicates=50,
            seed=777,
            x_names=("log_ri", "zeta"),
        )
        counts = model_selection_counts(sc, DEFAULT_MODEL_FORMULAS, method="ml")
        assert (counts["model3"] + counts["model4"]) / 50 >= 0.8


def test_dataset_from_table_roundtrip():
    rng = np.random.default_rng(20)
    t = AreaCovariateTable(domain_ids=["a", "b", "c", "d", "e"])
    t.add_column("y", rng.normal(size=5))
    t.add_column("sigma2_d", rng.uniform(0.5, 1.0, 5))
    t.add_column("x1", rng.normal(size=5))
    data = dataset_from_table(t, "y ~ x1")
    assert data.n_params == 2
    assert np.array_equal(data.y, t.column("y"))
    assert np.array_equal(data.X[:, 1], t.column("x1"))
