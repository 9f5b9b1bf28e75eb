import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehaoi.belief import (
    Observation,
    build_lambda,
    choose_M,
    enumerate_truncated_space,
    lambda_power_closed_form,
    rho_vectors,
    uniform_belief,
    update_belief,
)
from ehaoi.model import ModelParams

rates = st.floats(min_value=1e-3, max_value=1.0, allow_nan=False)


class TestLambda:
    @given(lam=rates, B=st.integers(1, 6))
    def test_lower_bidiagonal_and_column_stochastic(self, lam, B):
        L = build_lambda(lam, B)
        np.testing.assert_allclose(L.sum(axis=0), 1.0, atol=1e-14)
        assert np.all(L >= 0)
        np.testing.assert_array_equal(np.triu(L, 1), 0.0)
        np.testing.assert_array_equal(np.tril(L, -2), 0.0)

    @given(lam=rates, B=st.integers(1, 4), m=st.integers(0, 60))
    def test_closed_form_matches_matrix_power(self, lam, B, m):
        np.testing.assert_allclose(lambda_power_closed_form(lam, B, m),
                                   np.linalg.matrix_power(build_lambda(lam, B), m), atol=1e-12, rtol=0)

    def test_full_battery_is_absorbing(self):
        P = lambda_power_closed_form(0.3, 3, 25)
        np.testing.assert_array_equal(P[:, 3], [0, 0, 0, 1])

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            lambda_power_closed_form(0.3, 2, -1)


class TestRho:
    def test_shapes_and_identity_of_first_two(self):
        rho = rho_vectors(0.25, 3)
        np.testing.assert_array_equal(rho[0], rho[1])
        np.testing.assert_allclose(rho.sum(axis=1), 1.0)
        np.testing.assert_allclose(rho[3], [0, 0, 0.75, 0.25])


class TestUpdate:
    def test_idle_slot_propagates(self):
        beta = np.array([0.5, 0.3, 0.2])
        out = update_belief(beta, 0, Observation(1, 3, 2), 0.1)
        np.testing.assert_allclose(out, build_lambda(0.1, 2) @ beta)

    def test_failed_command_means_empty(self):
        out = update_belief(uniform_belief(2), 1, Observation(0, 5, 2), 0.1)
        np.testing.assert_allclose(out, [0.9, 0.1, 0.0])

    def test_successful_command_resets(self):
        out = update_belief(uniform_belief(2), 1, Observation(0, 1, 2), 0.1)
        np.testing.assert_allclose(out, [0.0, 0.9, 0.1])

    def test_fresh_update_without_command_is_inconsistent(self):
        with pytest.raises(ValueError):
            update_belief(uniform_belief(2), 0, Observation(0, 1, 2), 0.1)

    @given(lam=rates, a=st.integers(0, 1), delta=st.integers(1, 10), bt=st.integers(1, 3))
    def test_result_is_a_distribution(self, lam, a, delta, bt):
        if a == 0 and delta == 1:
            delta = 2
        out = update_belief(uniform_belief(3), a, Observation(0, delta, bt), lam)
        assert np.all(out >= 0)
        assert out.sum() == pytest.approx(1.0)


class TestTruncatedSpace:
    def test_table_columns_follow_lambda_powers(self):
        params = ModelParams(0.07, 0.8, 3, 16, M=10)
        space = enumerate_truncated_space(params)
        rho = rho_vectors(0.07, 3)
        for m in (0, 1, 5, 10):
            P = lambda_power_closed_form(0.07, 3, m)
            np.testing.assert_allclose(space.table[0, m], P @ space.beta0, atol=1e-13)
            for j in range(1, 4):
                np.testing.assert_allclose(space.table[j, m], P @ rho[j], atol=1e-13)

    def test_flat_roundtrip(self):
        space = enumerate_truncated_space(ModelParams(0.1, 0.5, 2, 8, M=5))
        k = np.arange(space.size)
        np.testing.assert_array_equal(space.flat(*space.unflat(k)), k)

    def test_index_moves(self):
        space = enumerate_truncated_space(ModelParams(0.1, 0.5, 2, 8, M=5))
        assert space.after_idle(2, 5) == (2, 5)
        assert space.after_idle(2, 3) == (2, 4)
        assert space.after_command(False) == (1, 0)
        assert space.after_command(True, 2) == (2, 0)

    def test_bad_initial_belief(self):
        with pytest.raises(ValueError):
            enumerate_truncated_space(ModelParams(0.1, 0.5, 2, 8, M=5), beta0=np.array([0.5, 0.6, 0.0]))


class TestChooseM:
    @settings(max_examples=30)
    @given(lam=st.floats(0.02, 0.9), B=st.integers(1, 4))
    def test_depth_reaches_tolerance(self, lam, B):
        M = choose_M(lam, B, 1e-3)
        space = enumerate_truncated_space(ModelParams(lam, 0.5, B, 8, M=M))
        assert np.all(1.0 - space.table[:, M, B] <= 1e-3)
        if M > 1:
            assert np.any(1.0 - space.table[:, M - 1, B] > 1e-3)

    def test_higher_rate_needs_fewer_slots(self):
        assert choose_M(0.1, 2) < choose_M(0.05, 2) < choose_M(0.02, 2)
