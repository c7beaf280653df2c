import numpy as np
import pytest

from gacm.basis import CenteredBasis, KnotVector, eval_raw, eval_raw_many, fit_centering, make_knots
from gacm.errors import DegenerateDataError, DegenerateDataWarning, DomainError

from oracles import bspline_value_oracle


def uniform_column(n=300, seed=0):
    return np.random.default_rng(seed).uniform(size=n)


class TestMakeKnots:
    def test_no_interior_knots(self):
        kv = make_knots(uniform_column(), 0, 4)
        assert kv.n_interior == 0
        assert kv.n_basis == 4

    def test_quantile_placement(self):
        kv = make_knots(uniform_column(300, seed=3), 3, 4)
        assert np.allclose(kv.interior, [0.25, 0.5, 0.75], atol=0.1)

    def test_basis_count_is_knots_plus_order(self):
        kv = make_knots(uniform_column(), 3, 4)
        assert kv.n_basis == 7

    def test_duplicate_quantiles_collapse_with_warning(self):
        col = np.repeat([0.0, 0.5, 1.0], 100)
        with pytest.warns(DegenerateDataWarning):
            kv = make_knots(col, 4, 4)
        assert kv.n_interior < 4

    def test_constant_column_rejected(self):
        with pytest.raises(DegenerateDataError):
            make_knots(np.full(50, 0.3), 2, 4)


class TestEvalRaw:
    @pytest.mark.parametrize("q", [2, 3, 4])
    @pytest.mark.parametrize("n_knots", [0, 1, 3])
    def test_partition_of_unity(self, q, n_knots):
        kv = make_knots(uniform_column(400, seed=q), n_knots, q)
        x = np.random.default_rng(7).uniform(size=10_000)
        total = eval_raw_many(kv, x).sum(axis=1)
        assert np.abs(total - 1.0).max() < 1e-10

    @pytest.mark.parametrize("q", [2, 3, 4])
    def test_local_support(self, q):
        kv = make_knots(uniform_column(), 3, q)
        x = np.random.default_rng(5).uniform(size=500)
        assert (eval_raw_many(kv, x) > 0).sum(axis=1).max() <= q

    def test_linear_hats_by_hand(self):
        # order 2 with one interior knot at 0.5: hats peak at 0, 0.5, 1
        kv = KnotVector(order=2, interior=np.array([0.5]))
        assert np.allclose(eval_raw(kv, 0.25), [0.5, 0.5, 0.0])

    def test_endpoints(self):
        kv = make_knots(uniform_column(), 3, 4)
        left = eval_raw(kv, 0.0)
        right = eval_raw(kv, 1.0)
        assert left[0] == 1.0 and np.allclose(left[1:], 0.0)
        assert right[-1] == 1.0 and np.allclose(right[:-1], 0.0)

    def test_domain_error(self):
        kv = make_knots(uniform_column(), 1, 3)
        with pytest.raises(DomainError):
            eval_raw(kv, 1.2)
        with pytest.raises(DomainError):
            eval_raw_many(kv, np.array([-0.1, 0.5]))

    @pytest.mark.parametrize("q", [2, 3, 4])
    @pytest.mark.parametrize("n_knots", [0, 1, 3])
    def test_against_divided_difference_oracle(self, q, n_knots):
        kv = make_knots(uniform_column(500, seed=10 * q + n_knots), n_knots, q)
        xs = np.random.default_rng(99).uniform(0.01, 0.99, size=200)
        values = eval_raw_many(kv, xs)
        full = kv.full
        for i, x in enumerate(xs):
            expect = [bspline_value_oracle(full, q, j, x) for j in range(kv.n_basis)]
            assert np.allclose(values[i], expect, atol=1e-8)


class TestCentering:
    def test_active_functions_have_zero_sample_mean(self):
        col = uniform_column(400, seed=2)
        cb = fit_centering(make_knots(col, 3, 4), col)
        means = cb.eval_many(col).mean(axis=0)
        assert np.abs(means).max() < 1e-9

    def test_first_ratio_is_one(self):
        col = uniform_column()
        cb = fit_centering(make_knots(col, 3, 4), col)
        assert cb.ratios[0] == pytest.approx(1.0)

    def test_count_and_scale(self):
        col = uniform_column()
        cb3 = fit_centering(make_knots(col, 3, 4), col)
        assert cb3.n_funcs == 6
        assert cb3.scale == pytest.approx(np.sqrt(3.0))
        cb0 = fit_centering(make_knots(col, 0, 4), col)
        assert cb0.scale == 1.0

    def test_centering_term_vanishes_where_first_raw_is_zero(self):
        col = uniform_column(500, seed=4)
        kv = make_knots(col, 3, 4)
        cb = fit_centering(kv, col)
        x = np.array([0.9, 0.95])
        raw = eval_raw_many(kv, x)
        assert np.allclose(raw[:, 0], 0.0)
        assert np.allclose(cb.eval_many(x), cb.scale * raw[:, 1:])

    def test_eval_matches_scalar_and_vector(self):
        col = uniform_column()
        cb = fit_centering(make_knots(col, 2, 3), col)
        x = 0.37
        assert np.allclose(cb.eval(x), cb.eval_many(np.array([x]))[0])
