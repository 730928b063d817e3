import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from svbvar.data import (
    ChainOutput,
    CsvState,
    FsvState,
    Panel,
    SvState,
    VarState,
    ar4_residual_variances,
    build_var_data,
    impact_matrix,
    loadings_matrix,
    transform_series,
)

DLOG400_100_101 = 3.98013234126723665682443885978  # 400 ln(1.01), mpmath


class TestTransforms:
    def test_dlog400(self):
        np.testing.assert_allclose(transform_series([100.0, 101.0], "dlog400"), [DLOG400_100_101], rtol=1e-12)

    def test_identity(self):
        np.testing.assert_array_equal(transform_series([5, 7, 2], "none"), [5, 7, 2])

    def test_second_difference_of_logs(self):
        np.testing.assert_allclose(transform_series([1.0, np.e, np.e**3], "d2log"), [1.0], rtol=1e-12)

    def test_nonpositive_value_names_index(self):
        with pytest.raises(ValueError, match="index 2"):
            transform_series([1.0, 2.0, -1.0, 3.0], "dlog400")

    def test_too_short(self):
        with pytest.raises(ValueError):
            transform_series([1.0, 2.0], "d2log")

    def test_unknown_code(self):
        with pytest.raises(ValueError):
            transform_series([1.0, 2.0], "log")

    @given(arrays(float, st.integers(3, 40), elements=st.floats(0.1, 1e4)), st.sampled_from(["none", "dlog400", "d2log"]))
    def test_length_contracts_by_differencing_order(self, x, code):
        order = {"none": 0, "dlog400": 1, "d2log": 2}[code]
        assert transform_series(x, code).size == x.size - order


class TestVarData:
    def test_small_dimensions(self):
        d = build_var_data(Panel.from_array(np.arange(20.0).reshape(10, 2)), 2)
        assert d.Y.shape == (8, 2) and d.X.shape == (8, 5) and d.k == 5

    def test_full_dataset_dimensions(self):
        d = build_var_data(np.random.default_rng(0).standard_normal((244, 30)), 4)
        assert d.Y.shape == (240, 30) and d.X.shape == (240, 121)

    def test_constant_column(self):
        vals = np.column_stack([np.full(6, 3.5), np.arange(6.0)])
        d = build_var_data(vals, 1)
        np.testing.assert_array_equal(d.X[:, 0], 1.0)
        np.testing.assert_array_equal(d.X[:, 1], 3.5)

    def test_lag_alignment(self):
        vals = np.arange(12.0).reshape(6, 2)
        d = build_var_data(vals, 2)
        # row t of X holds (1, y_{t-1}, y_{t-2})
        np.testing.assert_array_equal(d.X[0], [1, 2, 3, 0, 1])
        np.testing.assert_array_equal(d.Y[0], [4, 5])

    def test_insufficient_rows(self):
        with pytest.raises(ValueError):
            build_var_data(np.ones((2, 2)), 2)

    def test_equationwise_ols_matches_dense_least_squares(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((60, 5))
        d = build_var_data(vals, 2)
        B = np.linalg.solve(d.X.T @ d.X, d.X.T @ d.Y)
        for i in range(5):
            # dense oracle: regressors assembled by hand
            rows = [np.concatenate([[1.0], vals[t - 1], vals[t - 2]]) for t in range(2, 60)]
            coef, *_ = np.linalg.lstsq(np.array(rows), vals[2:, i], rcond=None)
            np.testing.assert_allclose(B[:, i], coef, atol=1e-10)


class TestAr4Variances:
    def test_white_noise(self):
        x = np.random.default_rng(1).standard_normal((5000, 1))
        s2 = ar4_residual_variances(x)
        assert 0.9 <= s2[0] <= 1.1

    def test_exact_recurrence_is_degenerate(self):
        rng = np.random.default_rng(2)
        y = list(rng.standard_normal(4))
        for _ in range(30):
            y.append(1.0 + 0.5 * y[-1] - 0.3 * y[-2] + 0.2 * y[-3] - 0.1 * y[-4])
        with pytest.warns(RuntimeWarning):
            s2 = ar4_residual_variances(np.array(y)[:, None])
        assert s2[0] == 0.0

    def test_constant_column_is_rank_error(self):
        with pytest.raises(np.linalg.LinAlgError):
            ar4_residual_variances(np.full((30, 1), 2.0))

    def test_short_column(self):
        with pytest.raises(ValueError):
            ar4_residual_variances(np.ones((6, 1)))


class TestStateInvariants:
    def test_var_state_needs_spd(self):
        with pytest.raises(ValueError):
            VarState(np.zeros((3, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_csv_state(self):
        A, S, h = np.zeros((3, 2)), np.eye(2), np.zeros(5)
        CsvState(A, S, h, 0.5, 0.1, 0.04)
        for bad in ({"phi": 1.0}, {"sigma2": 0.0}, {"kappa": -1.0}):
            kw = {"phi": 0.5, "sigma2": 0.1, "kappa": 0.04, **bad}
            with pytest.raises(ValueError):
                CsvState(A, S, h, **kw)

    def test_sv_state_triangularity(self):
        n, k, T = 3, 4, 5
        args = dict(alpha=np.zeros((n, k)), h=np.zeros((n, T)), mu=np.zeros(n), phi=np.full(n, 0.5), sigma2=np.ones(n), kappa1=1, kappa2=1, kappa3=1)
        s = SvState(beta=(np.empty(0), np.ones(1), np.ones(2)), **args)
        np.testing.assert_array_equal(s.B0, [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
        with pytest.raises(ValueError):
            SvState(beta=(np.empty(0), np.ones(2), np.ones(2)), **args)

    def test_fsv_state_factor_bound(self):
        n, r, T = 3, 1, 5
        args = dict(alpha=np.zeros((n, 4)), f=np.zeros((r, T)), h=np.zeros((n + r, T)), mu=np.zeros(n + r), phi=np.full(n + r, 0.5), sigma2=np.ones(n + r), kappa1=1, kappa2=1)
        s = FsvState(l=(np.empty(0), np.ones(1), np.ones(1)), **args)
        assert s.r == 1 and s.L.shape == (3, 1)
        r2 = 2
        args2 = dict(alpha=np.zeros((n, 4)), f=np.zeros((r2, T)), h=np.zeros((n + r2, T)), mu=np.zeros(n + r2), phi=np.full(n + r2, 0.5), sigma2=np.ones(n + r2), kappa1=1, kappa2=1)
        with pytest.raises(ValueError):
            FsvState(l=(np.empty(0), np.ones(1), np.ones(2)), **args2)
        FsvState(l=(np.empty(0), np.ones(1), np.ones(2)), strict=False, **args2)

    def test_records_are_read_only(self):
        s = VarState(np.zeros((3, 2)), np.eye(2))
        with pytest.raises(ValueError):
            s.A[0, 0] = 1.0


def test_impact_and_loading_matrices():
    B0 = impact_matrix([np.empty(0), np.array([2.0]), np.array([3.0, 4.0])], 3)
    np.testing.assert_array_equal(B0, [[1, 0, 0], [2, 1, 0], [3, 4, 1]])
    L = loadings_matrix([np.empty(0), np.array([0.5]), np.array([0.1, 0.2]), np.array([0.3, 0.4])], 4, 2)
    np.testing.assert_array_equal(L, [[1, 0], [0.5, 1], [0.1, 0.2], [0.3, 0.4]])


def test_chain_output_counts():
    draws = [VarState(np.zeros((3, 2)), np.eye(2) * (i + 1)) for i in range(4)]
    out = ChainOutput("var", draws, {"step": (3, 4)}, config=None)
    assert len(out) == 4 and out.acceptance_rate("step") == 0.75
    assert out.stack("Sigma").shape == (4, 2, 2)


def test_panel_validation():
    with pytest.raises(ValueError):
        Panel(np.ones((3, 2)), ("a",), ("none",))
    with pytest.raises(ValueError):
        Panel(np.ones((3, 1)), ("a",), ("bogus",))
    with pytest.raises(ValueError):
        Panel(np.array([[np.nan]]), ("a",), ("none",))
