import math

import numpy as np
import pytest

from miximpute.cgmm import PriorConfig
from miximpute.data_model import Dataset, VariableKind
from miximpute.errors import ValidationError
from miximpute.gibbs import ChainConfig, run_chain
from miximpute.rng import RngStream
from miximpute.simbench import (
    MetricReport,
    ReplicationReport,
    ScenarioSpec,
    SimConfig,
    apply_missingness,
    baseline_impute,
    generate_scenario,
    metric_mae,
    metric_mape,
    metric_mce,
    population_mean_estimate,
    run_replications,
)

BIG_N = 1_000_000


def s1_analytic_moments():
    lam = np.array([0.4, 0.6])
    mu = np.array([[2.0, 4.0, 1.0, 0.0], [-2.0, 7.0, -3.0, 0.0]])
    idx = np.arange(4)
    sigma = 3.0 * np.power(-0.5, np.abs(np.subtract.outer(idx, idx)))
    mean = lam @ mu
    second = sum(l * (sigma + np.outer(m, m)) for l, m in zip(lam, mu))
    return mean, second - np.outer(mean, mean)


class TestScenario1:
    def test_block_moments_match_mixture_arithmetic(self):
        spec = ScenarioSpec(1, "continuous", N=BIG_N, n=10)
        pop = generate_scenario(spec, RngStream(1))
        joint = np.column_stack([pop.ystar, pop.x])
        mean, cov = s1_analytic_moments()
        assert abs(joint[:, 0].mean() - (-0.4)) < 0.01
        assert np.max(np.abs(joint.mean(0) - mean)) < 0.02
        assert abs(np.var(pop.x[:, 1]) - 3.0) < 0.05
        emp_cov = np.cov(joint, rowvar=False)
        assert np.max(np.abs(emp_cov - cov)) < 0.05

    def test_continuous_mode_copies_latent(self):
        pop = generate_scenario(ScenarioSpec(1, "continuous", N=1000, n=10), RngStream(2))
        assert np.array_equal(pop.y, pop.ystar)


class TestScenario234:
    def test_x_mixture_moments(self):
        pop = generate_scenario(ScenarioSpec(2, "continuous", N=BIG_N, n=10), RngStream(3))
        lam = np.array([0.2, 0.3, 0.2, 0.3])
        mu = np.array([[-1.0, 0.5], [1.0, 1.0], [0.5, -1.0], [0.0, 0.0]])
        want = lam @ mu
        assert np.max(np.abs(pop.x.mean(0) - want)) < 0.01

    def test_regime_split_is_40_percent(self):
        """P(U_k > c_k) = 0.4 by construction of the 60% quantile."""
        spec = ScenarioSpec(2, "continuous", N=200_000, n=10)
        pop = generate_scenario(spec, RngStream(4))
        assert abs(pop.regimes[:, 0].mean() - 0.4) < 0.005
        assert abs(pop.regimes[:, 1].mean() - 0.4) < 0.005
        # and the regime indicators drive the printed mean structure
        m_hi = 10.0 - pop.x[:, 0] - pop.x[:, 1]
        m_lo = 6.0 - 0.5 * pop.x[:, 0] + 2.0 * pop.x[:, 1]
        resid_hi = pop.ystar[pop.regimes[:, 1], 1] - m_hi[pop.regimes[:, 1]]
        resid_lo = pop.ystar[~pop.regimes[:, 1], 1] - m_lo[~pop.regimes[:, 1]]
        assert abs(resid_hi.mean()) < 0.02 and abs(resid_lo.mean()) < 0.02
        assert abs(resid_hi.var() - 1.0) < 0.02

    def test_s3_uses_squared_terms(self):
        pop2 = generate_scenario(ScenarioSpec(2, "continuous", N=200_000, n=10), RngStream(5))
        pop3 = generate_scenario(ScenarioSpec(3, "continuous", N=200_000, n=10), RngStream(5))
        # same x-process seed; the mean structures differ
        assert abs(pop2.ystar[:, 0].mean() - pop3.ystar[:, 0].mean()) > 0.2

    def test_s4_gamma_noise_shifts_mean_by_one(self):
        p3 = generate_scenario(ScenarioSpec(3, "continuous", N=400_000, n=10), RngStream(6))
        p4 = generate_scenario(ScenarioSpec(4, "continuous", N=400_000, n=10), RngStream(6))
        # Ga(1,1) noise has mean 1 where the normal noise has mean 0
        d = p4.ystar.mean(0) - p3.ystar.mean(0)
        assert np.max(np.abs(d - 1.0)) < 0.02

    def test_mixed_mode_transforms(self):
        pop = generate_scenario(ScenarioSpec(1, "mixed", N=5000, n=10), RngStream(7))
        assert set(np.unique(pop.y[:, 0])) <= {0.0, 1.0}
        assert np.all(pop.y[:, 1] >= 0) and np.all(pop.y[:, 1] == np.floor(pop.y[:, 1]))
        assert np.array_equal(pop.y[:, 0], (pop.ystar[:, 0] > 0).astype(float))

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            ScenarioSpec(5)
        with pytest.raises(ValidationError):
            ScenarioSpec(1, N=10, n=100)


class TestMissingness:
    def test_logit_zero_point(self):
        n = 200_000
        x = np.column_stack([np.full(n, 3.0), np.zeros(n)])
        y = np.zeros((n, 2))
        ds = apply_missingness(x, y, (VariableKind.continuous(),) * 2, RngStream(8))
        # logit P(d1=1) = 1.5 - 0.5*3 = 0
        assert abs(ds.delta[:, 0].mean() - 0.5) < 0.005

    def test_overall_rate_scenario1(self):
        """The exact transcription of the generators and the two logistic
        response models gives a 22.6% overall cell missing rate on scenario 1
        (quadrature oracle below; the mechanism masks y2 about twice as often
        as y1)."""
        pop = generate_scenario(ScenarioSpec(1, "continuous", N=100_000, n=10), RngStream(9))
        ds = apply_missingness(pop.x, pop.y, pop.kinds, RngStream(10))

        def obs_prob(intercept, mean, var):
            # E[logistic(intercept - 0.5 X)], X ~ N(mean, var), by quadrature
            from scipy import integrate

            f = lambda t: (1.0 / (1.0 + math.exp(-(intercept - 0.5 * t)))) * math.exp(
                -0.5 * (t - mean) ** 2 / var
            ) / math.sqrt(2 * math.pi * var)
            return integrate.quad(f, mean - 12 * math.sqrt(var), mean + 12 * math.sqrt(var))[0]

        p1 = 0.4 * obs_prob(1.5, 1.0, 3.0) + 0.6 * obs_prob(1.5, -3.0, 3.0)
        p2 = obs_prob(1.0, 0.0, 3.0)
        want = 1.0 - 0.5 * (p1 + p2)
        missing_rate = 1.0 - ds.delta.mean()
        assert abs(missing_rate - want) < 0.005
        assert abs((1.0 - ds.delta[:, 0].mean()) - (1.0 - p1)) < 0.005

    def test_extreme_covariate_limit(self):
        n = 1000
        x = np.column_stack([np.zeros(n), np.full(n, -40.0)])
        ds = apply_missingness(x, np.zeros((n, 2)), (VariableKind.continuous(),) * 2,
                               RngStream(11))
        assert np.all(ds.delta[:, 1] == 1)  # logit -> +inf

    def test_covariates_untouched(self):
        pop = generate_scenario(ScenarioSpec(2, "continuous", N=1000, n=10), RngStream(12))
        ds = apply_missingness(pop.x, pop.y, pop.kinds, RngStream(13))
        assert np.array_equal(ds.x, pop.x)
        assert np.all(np.isfinite(ds.x))


class TestMetrics:
    def setup_method(self):
        self.truth = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 2.0]])
        self.mask = np.array([[0, 1], [1, 0], [0, 0]])

    def test_perfect_imputation(self):
        assert metric_mae(self.truth, self.truth, self.mask, 0) == 0.0
        assert metric_mce(self.truth, self.truth, self.mask, 1) == 0.0
        assert metric_mape(self.truth, self.truth, self.mask, 1) == 0.0

    def test_single_cell(self):
        imp = self.truth.copy()
        imp[0, 0] = 2.5
        mask = np.array([[0, 1], [1, 1], [1, 1]])
        assert metric_mae(self.truth, imp, mask, 0) == pytest.approx(1.5)

    def test_mce_half(self):
        imp = self.truth.copy()
        imp[1, 1] = 0.0  # one of the two missing binary cells wrong
        assert metric_mce(self.truth, imp, self.mask, 1) == pytest.approx(0.5)

    def test_mape_formula(self):
        truth = np.array([[0.0]])
        imp = np.array([[2.0]])
        assert metric_mape(truth, imp, np.array([[0]]), 0) == pytest.approx(2.0)

    def test_loop_oracle(self, rng):
        gen = rng.gen
        for _ in range(5):
            t = gen.normal(size=(30, 2))
            v = gen.normal(size=(30, 2))
            m = gen.integers(0, 2, size=(30, 2))
            m[0] = 0
            total, cnt = 0.0, 0
            for i in range(30):
                if m[i, 1] == 0:
                    total += abs(v[i, 1] - t[i, 1])
                    cnt += 1
            assert metric_mae(t, v, m, 1) == pytest.approx(total / cnt, abs=1e-12)

    def test_requires_missing_cells(self):
        with pytest.raises(ValidationError):
            metric_mae(self.truth, self.truth, np.ones((3, 2)), 0)


class TestPopulationMean:
    def test_no_missingness(self):
        y = np.array([[1.0], [3.0]])
        ds = Dataset(x=np.zeros((2, 0)), y=y, delta=np.ones((2, 1), dtype=np.uint8),
                     kinds=(VariableKind.continuous(),))
        assert population_mean_estimate(ds, y * 100, 0) == pytest.approx(2.0)

    def test_all_missing(self):
        ds = Dataset(x=np.zeros((2, 0)), y=np.full((2, 1), np.nan),
                     delta=np.zeros((2, 1), dtype=np.uint8),
                     kinds=(VariableKind.continuous(),))
        assert population_mean_estimate(ds, np.array([[4.0], [6.0]]), 0) == pytest.approx(5.0)

    def test_mixed_loop_oracle(self, rng):
        gen = rng.gen
        y = gen.normal(size=(40, 1))
        d = gen.integers(0, 2, size=(40, 1)).astype(np.uint8)
        ymask = y.copy(); ymask[d == 0] = np.nan
        ds = Dataset(x=np.zeros((40, 0)), y=ymask, delta=d,
                     kinds=(VariableKind.continuous(),))
        imp = gen.normal(size=(40, 1))
        want = np.mean([y[i, 0] if d[i, 0] else imp[i, 0] for i in range(40)])
        assert population_mean_estimate(ds, imp, 0) == pytest.approx(want, abs=1e-12)


class TestBaselines:
    def test_column_mean_values(self):
        y = np.array([[1.0], [3.0], [np.nan]])
        ds = Dataset(x=np.zeros((3, 0)), y=y, delta=[[1], [1], [0]],
                     kinds=(VariableKind.continuous(),))
        draws = baseline_impute(ds, "column_mean")
        assert draws.m == 1
        assert draws.datasets[0].y[2, 0] == pytest.approx(2.0)

    def test_column_mean_discrete_fills(self):
        y = np.array([[1.0, 2.0], [1.0, 3.0], [0.0, np.nan], [np.nan, 2.0]])
        delta = np.array([[1, 1], [1, 1], [1, 0], [0, 1]], dtype=np.uint8)
        ds = Dataset(x=np.zeros((4, 0)), y=y, delta=delta,
                     kinds=(VariableKind.binary(), VariableKind.count()))
        out = baseline_impute(ds, "column_mean").datasets[0]
        assert out.y[3, 0] == 1.0  # mode of {1,1,0}
        assert out.y[2, 1] == 2.0  # round(mean{2,3,2}) = round(2.33)

    def test_fully_observed_unchanged(self, two_component_data):
        ds = two_component_data
        complete = ds.completed(np.nan_to_num(ds.y))
        out = baseline_impute(complete, "column_mean").datasets[0]
        assert np.array_equal(out.y, complete.y)

    def test_single_gaussian_is_engine_g1(self, two_component_data):
        priors = PriorConfig.from_data(two_component_data, 1)
        cfg = ChainConfig(burn_in=3, keep=6, m_imputations=2)
        a = baseline_impute(two_component_data, "single_gaussian", rng=RngStream(5),
                            priors=priors, config=cfg)
        b, _ = run_chain(two_component_data, 1, priors, cfg, RngStream(5))
        for x, y in zip(a.datasets, b.datasets):
            assert np.array_equal(x.y, y.y)

    def test_unknown_method(self, two_component_data):
        with pytest.raises(ValidationError):
            baseline_impute(two_component_data, "magic")


class TestRunReplications:
    def test_single_replication_smoke(self):
        spec = ScenarioSpec(1, "continuous", N=800, n=120)
        cfg = SimConfig(
            G=3,
            chain=ChainConfig(burn_in=20, keep=40, m_imputations=3),
            B=25,
        )
        report = run_replications(spec, 1, cfg, RngStream(100))
        assert report.R == 1
        rec = report.records[0]
        assert set(rec.errors) == {"engine", "column_mean", "single_gaussian"}
        assert rec.intervals.shape == (2, 2)
        assert np.all(rec.intervals[:, 0] <= rec.intervals[:, 1])
        agg = report.aggregate()
        assert 0.0 <= agg["coverage"][0] <= 1.0

    def test_determinism_and_merge_order(self):
        spec = ScenarioSpec(2, "continuous", N=600, n=80)
        cfg = SimConfig(G=2, chain=ChainConfig(burn_in=10, keep=20, m_imputations=2),
                        B=10, run_baselines=False)
        r1 = run_replications(spec, 2, cfg, RngStream(7))
        r2 = run_replications(spec, 2, cfg, RngStream(7))
        for a, b in zip(r1.records, r2.records):
            assert np.array_equal(a.mean_estimates["engine"], b.mean_estimates["engine"])
            assert np.array_equal(a.coverage, b.coverage)

    def test_report_io(self, tmp_path):
        spec = ScenarioSpec(1, "continuous", N=500, n=60)
        cfg = SimConfig(G=2, chain=ChainConfig(burn_in=5, keep=10, m_imputations=2),
                        B=8, run_baselines=True)
        report = run_replications(spec, 2, cfg, RngStream(8))
        report.write_csv(tmp_path / "r.csv")
        report.write_json(tmp_path / "r.json")
        import json

        agg = json.loads((tmp_path / "r.json").read_text())
        assert agg["replications"] == 2
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 3 * 2  # header + R * methods * columns

    def test_coverage_predicate_hand_check(self):
        rec = MetricReport(
            replication=0,
            truth_means=np.array([0.0, 10.0]),
            mean_estimates={"engine": np.array([0.1, 9.0])},
            errors={"engine": np.array([0.1, 0.2])},
            coverage=np.array([True, False]),
            intervals=np.array([[-1.0, 1.0], [11.0, 12.0]]),
            non_null_avg=2.0,
        )
        spec = ScenarioSpec(1)
        rep = ReplicationReport(spec=spec, records=(rec, rec))
        assert rep.coverage_rate() == pytest.approx([1.0, 0.0])
