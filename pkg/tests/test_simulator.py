import csv

import numpy as np
import pytest

from ehaoi.baselines import greedy_policy
from ehaoi.belief import TruncatedBeliefSpace
from ehaoi.simulator import EpisodeConfig, episode_seeds, simulate, trace_episode, write_trace_csv


class TestConfig:
    def test_default_warmup(self):
        assert EpisodeConfig(1000).warmup_slots == 10
        assert EpisodeConfig(1000, warmup=0).warmup_slots == 0

    @pytest.mark.parametrize("kw", [dict(slots=0), dict(slots=10, episodes=0), dict(slots=10, warmup=10)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EpisodeConfig(**kw)

    def test_seed_tree_is_stable(self):
        a = episode_seeds(5, 3)
        b = episode_seeds(5, 3)
        assert [x[0].generate_state(2).tolist() for x in a] == [x[0].generate_state(2).tolist() for x in b]
        assert a[0][0].generate_state(1)[0] != a[1][0].generate_state(1)[0]


class TestSimulate:
    def test_deterministic(self, small_instance, small_params):
        conf = EpisodeConfig(20_000, episodes=3, seed=11)
        a = simulate(small_instance.policy("pomdp"), small_params, conf)
        b = simulate(small_instance.policy("pomdp"), small_params, conf)
        assert a == b
        c = simulate(small_instance.policy("pomdp"), small_params, EpisodeConfig(20_000, episodes=3, seed=12))
        assert c.mean != a.mean

    @pytest.mark.parametrize("name", ["pomdp", "greedy", "mle", "exact"])
    def test_backends_identical(self, small_instance, small_params, name):
        conf = EpisodeConfig(5_000, episodes=2, seed=1, chunk=1777)
        a = simulate(small_instance.policy(name), small_params, conf, use_numba=True)
        b = simulate(small_instance.policy(name), small_params, conf, use_numba=False)
        assert a == b

    def test_chunking_does_not_matter_for_cost(self, small_instance, small_params):
        # draws are chunked but the per-slot stream is the same for a fixed chunk size
        conf = EpisodeConfig(10_000, episodes=2, seed=4, chunk=10_000)
        a = simulate(small_instance.policy("pomdp"), small_params, conf)
        assert a.mean == simulate(small_instance.policy("pomdp"), small_params, conf).mean

    def test_agrees_with_solver(self, small_instance, small_params):
        est = simulate(small_instance.policy("pomdp"), small_params, EpisodeConfig(200_000, episodes=8, seed=2))
        assert abs(est.mean - small_instance.result.c_star) < 4 * est.stderr
        est = simulate(small_instance.policy("exact"), small_params, EpisodeConfig(200_000, episodes=8, seed=2))
        assert abs(est.mean - small_instance.exact.c_star_exact) < 4 * est.stderr

    def test_greedy_command_rate_is_request_rate(self, small_params):
        est = simulate(greedy_policy(small_params), small_params, EpisodeConfig(100_000, episodes=4))
        assert est.command_rate == pytest.approx(small_params.p, abs=0.01)
        assert est.update_rate <= small_params.lam + 0.01


@pytest.fixture(scope="module")
def traced(small_instance, small_params):
    conf = EpisodeConfig(3000, episodes=1, seed=9, chunk=512, warmup=0)
    rows, beliefs = trace_episode(small_instance.policy("pomdp"), small_params, conf, 3000,
                                  track_belief=True)
    return conf, rows, beliefs


class TestTrace:
    def test_matches_kernel(self, traced, small_instance, small_params):
        conf, rows, _ = traced
        est = simulate(small_instance.policy("pomdp"), small_params, conf)
        assert sum(r.cost for r in rows) == pytest.approx(est.mean * conf.slots, abs=1e-6)
        assert sum(r.a for r in rows) / conf.slots == pytest.approx(est.command_rate)

    def test_energy_causality(self, traced, small_params):
        _, rows, _ = traced
        for prev, cur in zip(rows, rows[1:]):
            assert cur.d <= (cur.b >= 1)
            assert 0 <= cur.b <= small_params.B
            assert cur.b >= prev.b - prev.d
            assert cur.b <= prev.b - prev.d + 1

    def test_reported_level_and_aoi(self, traced):
        _, rows, _ = traced
        for prev, cur in zip(rows, rows[1:]):
            if prev.d:
                assert cur.delta == 1
                assert cur.b_tilde == prev.b
            else:
                assert cur.b_tilde == prev.b_tilde
                assert cur.delta > 1

    def test_index_tracks_exact_belief(self, traced, small_instance):
        _, rows, beliefs = traced
        space = small_instance.space
        checked = 0
        for row, beta in zip(rows, beliefs):
            if row.col < space.M:
                np.testing.assert_allclose(space.table[row.row, row.col], beta, atol=1e-12)
                checked += 1
        assert checked > 100

    def test_failed_command_resets_to_rho_lineage(self, traced):
        _, rows, _ = traced
        for prev, cur in zip(rows, rows[1:]):
            if prev.a and not prev.d:
                assert (cur.row, cur.col) == TruncatedBeliefSpace.after_command(False)

    def test_csv(self, traced, tmp_path):
        _, rows, _ = traced
        path = tmp_path / "trace.csv"
        write_trace_csv(rows[:5], path)
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert got[0][:3] == ["t", "b", "r"]
        assert len(got) == 6
