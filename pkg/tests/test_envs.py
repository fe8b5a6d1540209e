import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from source_traces.envs import (STREAMS, EnvSpec, Trajectory, derive_seed, grid_index, grid_neighbors,
                                make_env, sample_step, sample_trajectory, stream)
from source_traces.errors import ConfigError


class TestStreams:
    def test_stream_ids_are_distinct(self):
        assert len(set(STREAMS.values())) == len(STREAMS)

    def test_streams_are_independent_of_each_other(self):
        a = stream(3, "trajectory").random(5)
        b = stream(3, "replay").random(5)
        assert not np.array_equal(a, b)

    def test_stream_reproducible(self):
        np.testing.assert_array_equal(stream(9, "env", 2).random(4), stream(9, "env", 2).random(4))

    def test_derive_seed(self):
        assert derive_seed(1, "env", 0) == derive_seed(1, "env", 0)
        assert len({derive_seed(1, "env", i) for i in range(100)}) == 100


class TestEnvSpec:
    @pytest.mark.parametrize("kwargs", [
        dict(kind="maze", gamma=0.9),
        dict(kind="random_mrp", gamma=1.0),
        dict(kind="random_mrp", gamma=0.9, out_degree=0),
        dict(kind="random_mrp", gamma=0.9, num_states=4, out_degree=5),
        dict(kind="gridworld3d", gamma=0.9, dims=(1, 4, 4)),
        dict(kind="gridworld3d", gamma=0.9, dims=(2, 2)),
        dict(kind="gridworld3d", gamma=0.9, dims=(2, 2, 2), num_reward_states=9),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            EnvSpec(**kwargs)

    def test_size(self):
        assert EnvSpec("gridworld3d", 0.9, dims=(2, 3, 4), num_reward_states=2).size == 24
        assert EnvSpec("random_mrp", 0.9, num_states=17).size == 17


class TestRandomMrp:
    def test_structure(self):
        m = make_env(EnvSpec("random_mrp", 0.9, seed=1))
        assert m.num_states == 100 and m.gamma == 0.9
        np.testing.assert_array_equal((m.transition > 0).sum(axis=1), 5)
        np.testing.assert_allclose(m.transition.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.linalg.matrix_rank(m.transition) == 100

    def test_rewards_look_standard_normal(self):
        r = np.concatenate([make_env(EnvSpec("random_mrp", 0.9, seed=s)).reward for s in range(20)])
        assert stats.kstest(r, "norm").pvalue > 1e-3

    def test_deterministic(self):
        a = make_env(EnvSpec("random_mrp", 0.9, seed=4))
        b = make_env(EnvSpec("random_mrp", 0.9, seed=4))
        np.testing.assert_array_equal(a.transition, b.transition)
        np.testing.assert_array_equal(a.reward, b.reward)

    def test_singular_p_allowed_when_requested(self):
        m = make_env(EnvSpec("random_mrp", 0.9, seed=2, num_states=30, out_degree=1, require_invertible_p=False))
        np.testing.assert_array_equal((m.transition > 0).sum(axis=1), 1)


class TestGridworld:
    def test_index_and_neighbors(self):
        dims = (10, 10, 10)
        assert grid_index(1, 2, 3, dims) == 321
        nb = grid_neighbors(grid_index(0, 0, 0, dims), dims)
        assert sorted(nb) == sorted([1, 9, 10, 90, 100, 900])

    def test_locality_and_rewards(self, grid64):
        for i in range(64):
            assert set(np.flatnonzero(grid64.transition[i])) <= set(grid_neighbors(i, (4, 4, 4)))
        assert (grid64.reward != 0).sum() == 5

    def test_six_neighbours_each(self):
        m = make_env(EnvSpec("gridworld3d", 0.95, seed=0, dims=(3, 4, 5), num_reward_states=3))
        np.testing.assert_array_equal((m.transition > 0).sum(axis=1), 6)

    def test_size_two_axis_merges(self):
        m = make_env(EnvSpec("gridworld3d", 0.95, seed=0, dims=(2, 3, 3), num_reward_states=3))
        np.testing.assert_array_equal((m.transition > 0).sum(axis=1), 5)
        np.testing.assert_allclose(m.transition.sum(axis=1), 1.0, atol=1e-12)

    def test_paper_size(self):
        m = make_env(EnvSpec("gridworld3d", 0.95, seed=3))
        assert m.num_states == 1000 and (m.reward != 0).sum() == 50


class TestSampling:
    def test_sample_step_matches_trajectory(self, mrp20):
        traj = sample_trajectory(mrp20, 200, stream(1, "trajectory"))
        rng = stream(1, "trajectory")
        s = int(rng.integers(20))
        assert s == traj.states[0]
        for t in range(200):
            r, j = sample_step(mrp20, s, rng)
            assert (r, j) == (traj.rewards[t], traj.states[t + 1])
            s = j

    def test_only_positive_probability_moves(self, grid64):
        traj = sample_trajectory(grid64, 5000, stream(2, "trajectory"))
        assert np.all(grid64.transition[traj.states[:-1], traj.states[1:]] > 0)

    def test_frequencies_match_rows(self, mrp20):
        traj = sample_trajectory(mrp20, 100_000, stream(3, "trajectory"), start=0)
        counts = np.zeros((20, 20))
        np.add.at(counts, (traj.states[:-1], traj.states[1:]), 1)
        visits = counts.sum(axis=1, keepdims=True)
        P = mrp20.transition
        # each entry is a binomial proportion; allow five standard errors
        se = np.sqrt(P * (1 - P) / visits)
        assert np.all(np.abs(counts / visits - P) <= 5 * se + 1e-12)

    def test_start_state(self, mrp20):
        assert sample_trajectory(mrp20, 3, stream(0, "trajectory"), start=7).states[0] == 7

    def test_reward_noise(self, mrp20):
        a = sample_trajectory(mrp20, 1000, stream(0, "trajectory"))
        b = sample_trajectory(mrp20, 1000, stream(0, "trajectory"), reward_noise=0.5, noise_rng=stream(0, "noise"))
        np.testing.assert_array_equal(a.states, b.states)
        assert 0.4 < np.std(b.rewards - a.rewards) < 0.6
        with pytest.raises(ValueError):
            sample_trajectory(mrp20, 10, stream(0, "trajectory"), reward_noise=0.5)

    def test_bad_state(self, mrp20):
        with pytest.raises(IndexError):
            sample_step(mrp20, 20, stream(0, "trajectory"))

    def test_trajectory_container(self):
        t = Trajectory(np.array([0, 1, 2]), np.array([0.5, -1.0]))
        assert len(t) == 2
        assert tuple(t[1]) == (1, -1.0, 2)
        assert [x.next_state for x in t] == [1, 2]
        with pytest.raises(ValueError):
            Trajectory(np.array([0, 1]), np.array([0.5, 1.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 6), st.integers(2, 6), st.integers(2, 6))
def test_gridworld_rows_stochastic_and_local(seed, x, y, z):
    dims = (x, y, z)
    m = make_env(EnvSpec("gridworld3d", 0.9, seed=seed, dims=dims, num_reward_states=1))
    np.testing.assert_allclose(m.transition.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    for i in range(0, m.num_states, 7):
        assert set(np.flatnonzero(m.transition[i])) <= set(grid_neighbors(i, dims))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 40), st.integers(1, 5))
def test_random_mrp_rows_stochastic(seed, n, k):
    k = min(k, n)
    m = make_env(EnvSpec("random_mrp", 0.9, seed=seed, num_states=n, out_degree=k, require_invertible_p=False))
    np.testing.assert_allclose(m.transition.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all((m.transition > 0).sum(axis=1) == k)
