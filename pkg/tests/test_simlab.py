import numpy as np
import pytest
from scipy.integrate import quad

from gacm.design import make_dataset
from gacm.family import GAUSSIAN, LOGIT
from gacm.simlab import (
    BenchConfig,
    FORMS,
    ScreeningResult,
    TruthSpec,
    cheverud_nyholt_meff,
    gen_example1,
    gen_snps,
    metrics,
    run_benchmark,
    screening_baseline,
)


class TestGenSnps:
    def test_hardy_weinberg_margins_balanced(self):
        T = gen_snps(40_000, 4, maf=0.5, block_rho=0.0, seed=0)
        for code, expect in ((-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)):
            assert np.abs((T == code).mean() - expect) < 0.01

    def test_hardy_weinberg_margins_skewed(self):
        T = gen_snps(100_000, 3, maf=0.3, block_rho=0.0, seed=1)
        freqs = [(T == c).mean() for c in (-1.0, 0.0, 1.0)]
        assert np.abs(np.array(freqs) - [0.49, 0.42, 0.09]).max() < 0.01

    def test_independent_columns_uncorrelated(self):
        T = gen_snps(4000, 6, maf=0.4, block_rho=0.0, seed=2)
        r = np.corrcoef(T.T)
        off = r[~np.eye(6, dtype=bool)]
        assert np.abs(off).max() < 3.0 / np.sqrt(4000) * 2

    def test_within_block_correlation_positive(self):
        T = gen_snps(6000, 20, maf=0.5, block_rho=0.4, block_size=10, seed=3)
        r = np.corrcoef(T.T)
        within = [r[i, j] for i in range(10) for j in range(i + 1, 10)]
        across = [r[i, j] for i in range(10) for j in range(10, 20)]
        assert np.mean(within) > 0.15
        assert abs(np.mean(across)) < 0.05

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            gen_snps(10, 2, maf=0.7)
        with pytest.raises(ValueError):
            gen_snps(10, 2, block_rho=1.0)


class TestGenExample1:
    def test_truth_functions_integrate_to_zero(self):
        ds, truth = gen_example1(50, 6, seed=0)
        for (l, k), (name, scale) in truth.forms.items():
            val, _ = quad(lambda x: FORMS[name](np.array([x]), scale)[0], 0.0, 1.0)
            assert val == pytest.approx(0.0, abs=1e-9)

    def test_mean_response_matches_monte_carlo(self):
        ds, truth = gen_example1(200_000, 4, seed=5)
        assert abs(ds.y.mean() - truth.mu_true.mean()) < 0.005

    def test_seed_reproducibility(self):
        a, _ = gen_example1(100, 10, seed=7)
        b, _ = gen_example1(100, 10, seed=7)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.X, b.X) and np.array_equal(a.T, b.T)

    def test_shapes_and_signal_layout(self):
        ds, truth = gen_example1(120, 30, seed=9)
        assert ds.X.shape == (120, 2) and ds.T.shape == (120, 30)
        assert truth.signal == (0, 1, 2, 3)
        assert truth.s == 4
        assert set(np.unique(ds.T)) <= {-1.0, 0.0, 1.0}

    def test_truth_round_trip(self):
        _, truth = gen_example1(50, 8, seed=11)
        clone = TruthSpec.from_dict(truth.to_dict())
        grid = np.linspace(0, 1, 7)
        for l in truth.signal:
            assert clone.intercept(l) == truth.intercept(l)
            for k in range(truth.d):
                assert np.allclose(clone.component(l, k, grid), truth.component(l, k, grid))


class TestMetrics:
    def test_exact_selection(self):
        _, truth = gen_example1(60, 8, seed=13)
        m = metrics(truth.signal, truth, truth.mu_true)
        assert m.correct and not m.overfit and not m.incorrect
        assert m.tp == 4 and m.fp == 0 and m.mr == 0.0

    def test_overfit_and_incorrect_flags(self):
        _, truth = gen_example1(60, 8, seed=13)
        over = metrics((0, 1, 2, 3, 6), truth, truth.mu_true)
        assert over.overfit and not over.correct and not over.incorrect
        assert over.fp == 1
        miss = metrics((0, 1), truth, truth.mu_true)
        assert miss.incorrect and not miss.correct and not miss.overfit

    def test_flags_partition(self):
        _, truth = gen_example1(60, 8, seed=13)
        for sel in [(), (0,), (0, 1, 2, 3), (0, 1, 2, 3, 4), (5,)]:
            m = metrics(sel, truth, truth.mu_true)
            assert int(m.correct) + int(m.overfit) + int(m.incorrect) == 1
            assert m.tp + m.fp == len(sel)

    def test_mr_positive_for_wrong_means(self):
        _, truth = gen_example1(60, 8, seed=13)
        m = metrics((0,), truth, np.full(60, 0.5))
        assert m.mr > 0.0


class TestMeff:
    def test_uncorrelated_equals_m(self):
        rng = np.random.default_rng(0)
        T = rng.standard_normal((400, 6))
        # exactly orthogonal columns give r = 0 off the diagonal
        q, _ = np.linalg.qr(T)
        assert cheverud_nyholt_meff(q[:, :6]) == pytest.approx(6.0, abs=0.15)

    def test_identical_columns_equal_one(self):
        col = np.random.default_rng(1).standard_normal(100)
        T = np.column_stack([col, col, col])
        assert cheverud_nyholt_meff(T) == pytest.approx(1.0)

    def test_exact_identity_with_synthetic_r(self):
        # M columns with exactly zero pairwise correlation
        n = 8
        T = np.eye(n)  # orthogonal indicator columns: corr = -1/(n-1), close but not 0
        eye_corr = np.corrcoef(T.T)
        expected = 1.0 + np.sum(1.0 - eye_corr**2) / n
        assert cheverud_nyholt_meff(T) == pytest.approx(expected)


class TestScreening:
    def test_rejects_non_logit_family(self):
        ds, _ = gen_example1(80, 6, seed=17)
        with pytest.raises(ValueError):
            screening_baseline(ds, fam=GAUSSIAN)

    def test_detects_strong_marginal_signal(self):
        rng = np.random.default_rng(19)
        n = 400
        X = rng.uniform(size=(n, 2))
        T = gen_snps(n, 10, maf=0.5, block_rho=0.0, seed=rng)
        eta = 2.5 * T[:, 0]
        y = rng.binomial(1, LOGIT.mean(eta)).astype(float)
        ds = make_dataset(y, X, T, rescaled=True)
        res = screening_baseline(ds)
        assert 0 in res.selected
        assert res.pvalues.shape == (10,)
        assert res.m_eff <= 10.0 + 1e-9

    def test_null_rarely_selects(self):
        rng = np.random.default_rng(23)
        n = 300
        X = rng.uniform(size=(n, 2))
        T = gen_snps(n, 40, maf=0.4, block_rho=0.0, seed=rng)
        y = rng.binomial(1, 0.5, size=n).astype(float)
        ds = make_dataset(y, X, T, rescaled=True)
        res = screening_baseline(ds)
        assert len(res.selected) == 0


class TestBenchmark:
    def test_single_rep_equals_its_record(self):
        cfg = BenchConfig(reps=1, n=200, p=20, B=10, seed=5, with_bands=False)
        result = run_benchmark(cfg)
        rec = result.per_rep[0]
        for row in result.table1:
            label = row["method"].lower()
            assert row["TP"] == rec[label]["tp"]
            assert row["MR"] == pytest.approx(rec[label]["mr"])

    def test_parallel_serial_identical(self):
        cfg1 = BenchConfig(reps=3, n=150, p=16, B=8, seed=9, with_bands=True, band_points=8, threads=1)
        cfg2 = BenchConfig(reps=3, n=150, p=16, B=8, seed=9, with_bands=True, band_points=8, threads=2)
        r1 = run_benchmark(cfg1)
        r2 = run_benchmark(cfg2)
        assert r1.per_rep == r2.per_rep
        assert r1.table1 == r2.table1
        assert r1.table2 == r2.table2

    def test_aggregate_matches_recomputation(self):
        cfg = BenchConfig(reps=4, n=150, p=16, B=8, seed=11, with_bands=False)
        result = run_benchmark(cfg)
        agl_tp = np.mean([r["agl"]["tp"] for r in result.per_rep])
        assert result.table1[0]["TP"] == pytest.approx(agl_tp)
        flags = [r["agl"]["correct"] + r["agl"]["overfit"] + r["agl"]["incorrect"] for r in result.per_rep]
        assert set(flags) == {1}
