import numpy as np
import pytest
import scipy.sparse as sp

from ehaoi.belief import enumerate_truncated_space
from ehaoi.model import ModelParams
from ehaoi.solver import (
    ConvergenceError,
    bellman_residual,
    build_augmented_kernel,
    build_kernel,
    empty_probability,
    evaluate_policy,
    policy_chain,
    policy_iteration_warm_start,
    policy_threshold_profile,
    q_values,
    q_values_explicit,
    recurrent_classes,
    rvia_solve,
    state_index,
    stationary_distribution,
)


class TestKernel:
    @pytest.mark.parametrize("B,M,D", [(1, 3, 6), (2, 8, 16), (4, 5, 10)])
    def test_row_widths_and_sums(self, B, M, D):
        params = ModelParams(0.15, 0.6, B, D, M=M)
        k = build_kernel(enumerate_truncated_space(params), params)
        assert k.idx0.shape == (k.n, 2)
        assert k.idx1.shape == (k.n, 2 * (B + 1))
        np.testing.assert_allclose(k.w0.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(k.w1.sum(axis=1), 1.0, atol=1e-12)
        assert k.idx0.min() >= 0 and k.idx1.max() < k.n

    def test_costs(self, small_instance):
        k, space, D = small_instance.kernel, small_instance.space, small_instance.params.delta_max
        z = state_index(space, D, 0, 2, 1, 5)
        assert k.c0[z] == 6
        beta0 = space.table[0, 2, 0]
        assert k.c1[z] == pytest.approx(beta0 * 6 + (1 - beta0))
        assert k.c0[state_index(space, D, 1, 0, 0, 5)] == 0

    def test_csr_views_merge_duplicates(self, small_instance):
        P1 = small_instance.kernel.P1
        assert isinstance(P1, sp.csr_matrix)
        np.testing.assert_allclose(np.asarray(P1.sum(axis=1)).ravel(), 1.0)

    def test_command_penalty_only_touches_command_cost(self, small_instance):
        k = small_instance.kernel
        kp = k.with_command_penalty(2.5)
        np.testing.assert_array_equal(kp.c0, k.c0)
        np.testing.assert_allclose(kp.c1, k.c1 + 2.5)


class TestQValues:
    def test_vector_and_explicit_paths_agree(self, small_instance, small_params):
        rng = np.random.default_rng(3)
        space, k = small_instance.space, small_instance.kernel
        h = rng.normal(size=k.n)
        q0, q1 = q_values(h, k)
        for row in range(space.B + 1):
            for col in (0, 1, space.M):
                for r in (0, 1):
                    for delta in (1, 4, small_params.delta_max):
                        z = state_index(space, small_params.delta_max, row, col, r, delta)
                        e0, e1 = q_values_explicit(h, space, small_params, row, col, r, delta)
                        assert q0[z] == pytest.approx(e0, abs=1e-12)
                        assert q1[z] == pytest.approx(e1, abs=1e-12)

    def test_backends_agree(self, small_instance):
        h = np.linspace(0, 1, small_instance.kernel.n)
        a = q_values(h, small_instance.kernel, use_numba=True)
        b = q_values(h, small_instance.kernel, use_numba=False)
        np.testing.assert_allclose(a, b, atol=1e-13)


class TestRvia:
    def test_fixed_point(self, small_instance):
        res = small_instance.result
        assert res.h[0] == 0.0
        assert bellman_residual(res, small_instance.kernel) < 1e-5
        lo, hi = res.c_bounds
        assert lo - 1e-9 <= res.c_star <= hi + 1e-9

    def test_stationary_cost_matches_gain(self, small_instance):
        ev = evaluate_policy(small_instance.kernel, small_instance.result.policy)
        assert ev.cost == pytest.approx(small_instance.result.c_star, abs=1e-6)

    def test_aperiodic_transform_preserves_solution(self, small_instance):
        res2 = rvia_solve(small_instance.kernel, 1e-9, tau=0.5)
        assert res2.c_star == pytest.approx(small_instance.result.c_star, abs=1e-6)
        np.testing.assert_array_equal(res2.policy, small_instance.result.policy)

    def test_backends_agree(self, small_instance):
        a = rvia_solve(small_instance.kernel, 1e-8, use_numba=True)
        b = rvia_solve(small_instance.kernel, 1e-8, use_numba=False)
        assert a.iterations == b.iterations
        np.testing.assert_allclose(a.h, b.h, atol=1e-9)
        np.testing.assert_array_equal(a.policy, b.policy)

    def test_iteration_budget(self, small_instance):
        with pytest.raises(ConvergenceError) as info:
            rvia_solve(small_instance.kernel, 1e-12, max_iter=3)
        assert info.value.iterations == 3

    def test_rejects_bad_arguments(self, small_instance):
        with pytest.raises(ValueError):
            rvia_solve(small_instance.kernel, tau=0.0)
        with pytest.raises(ValueError):
            rvia_solve(small_instance.kernel, z_ref=-1)

    def test_no_requests_means_no_cost(self):
        params = ModelParams(0.3, 0.0, 2, 10, M=4)
        res = rvia_solve(build_kernel(enumerate_truncated_space(params), params))
        assert res.c_star == pytest.approx(0.0, abs=1e-12)
        assert res.table()[:, :, 0].sum() == 0

    @pytest.mark.filterwarnings("ignore:policy chain has")
    def test_tiny_instance_against_dense_policy_iteration(self):
        # brute-force oracle: evaluate every policy that differs from the optimum in one state
        params = ModelParams(0.3, 0.6, 1, 4, M=2)
        k = build_kernel(enumerate_truncated_space(params), params)
        res = rvia_solve(k, 1e-11)
        base = evaluate_policy(k, res.policy).cost
        assert base == pytest.approx(res.c_star, abs=1e-8)
        for z in range(k.n):
            alt = res.policy.copy()
            alt[z] ^= 1
            assert evaluate_policy(k, alt).cost >= base - 1e-9


class TestWarmStart:
    def test_seeded_rvia_stops_at_once(self, small_instance):
        k = small_instance.kernel.with_command_penalty(3.0)
        ref = rvia_solve(k, 1e-9)
        h0 = policy_iteration_warm_start(k, small_instance.result.policy)
        res = rvia_solve(k, 1e-9, h0=h0)
        assert res.iterations <= 2
        assert res.c_star == pytest.approx(ref.c_star, abs=1e-7)
        np.testing.assert_array_equal(res.policy, ref.policy)

    def test_multichain_start_still_usable(self, small_instance):
        k = small_instance.kernel
        never = np.zeros(k.n, dtype=np.int8)
        h0 = policy_iteration_warm_start(k, never)
        assert np.all(np.isfinite(h0))
        res = rvia_solve(k, 1e-9, h0=h0)
        assert res.c_star == pytest.approx(small_instance.result.c_star, abs=1e-6)


class TestStationary:
    def test_two_state_chain(self):
        P = sp.csr_matrix(np.array([[0.9, 0.1], [0.3, 0.7]]))
        np.testing.assert_allclose(stationary_distribution(P), [0.75, 0.25])

    def test_transient_states_get_no_mass(self):
        P = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]]))
        pi = stationary_distribution(P)
        np.testing.assert_allclose(pi, [0.0, 0.5, 0.5])
        assert [c.tolist() for c in recurrent_classes(P)] == [[1, 2]]

    def test_matches_power_iteration(self, small_instance):
        P, _ = policy_chain(small_instance.kernel, small_instance.result.policy)
        pi = stationary_distribution(P)
        x = np.zeros(P.shape[0])
        x[0] = 1.0
        # lazy chain to avoid periodicity
        for _ in range(5000):
            x = 0.5 * x + 0.5 * (P.T @ x)
        np.testing.assert_allclose(pi, x, atol=1e-8)

    def test_update_rate_below_command_rate(self, small_instance):
        k, space = small_instance.kernel, small_instance.space
        ev = evaluate_policy(k, small_instance.result.policy, empty_probability(space, small_instance.params.delta_max))
        assert 0 < ev.update_rate <= ev.command_rate


class TestStructure:
    def test_profile_flags_violations(self):
        table = np.zeros((2, 3, 2, 5), dtype=np.int8)
        table[0, 0, 1, 2:] = 1
        table[0, 1, 1, 2:] = 1
        table[0, 2, 1, 2:] = 1
        prof = policy_threshold_profile(table)
        assert prof.ok()
        assert prof.thresholds[0].tolist() == [3, 3, 3]
        assert prof.thresholds[1].tolist() == [-1, -1, -1]
        table[0, 2, 1, 4] = 0
        table[1, 0, 0, 0] = 1
        prof = policy_threshold_profile(table)
        assert prof.aoi_violations == [(0, 2)]
        assert (0, 0, 5) in prof.lambda_violations
        assert prof.r0_commands == 1

    def test_small_instance_is_threshold(self, small_instance):
        prof = policy_threshold_profile(small_instance.result.table())
        assert prof.r0_commands == 0
        assert prof.is_threshold


class TestAugmented:
    def test_reported_level_does_not_change_values(self):
        params = ModelParams(0.2, 0.7, 2, 8, M=4)
        space = enumerate_truncated_space(params)
        aug = build_augmented_kernel(space, params)
        assert aug.n == build_kernel(space, params).n * 2
        np.testing.assert_allclose(aug.w1.sum(axis=1), 1.0)
        res = rvia_solve(aug, 1e-11)
        V = res.h.reshape(-1, params.B)
        assert np.max(np.ptp(V, axis=1)) < 1e-8
