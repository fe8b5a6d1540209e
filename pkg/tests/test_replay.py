import numpy as np
import pytest
from scipy import stats

from source_traces.envs import Transition, sample_trajectory, stream
from source_traces.errors import ConfigError, EmptyMemory
from source_traces.learners import Learner, LearnerConfig
from source_traces.mrp import exact_value
from source_traces.replay import ReplayMemory, real_step, replay_step
from source_traces.schedules import fixed


class TestMemory:
    def test_push_and_index(self):
        mem = ReplayMemory()
        mem.push((0, 1.5, 2))
        mem.push(Transition(2, -1.0, 1))
        assert len(mem) == 2
        assert mem[0] == Transition(0, 1.5, 2)
        assert isinstance(mem[1].state, int)

    def test_empty(self):
        with pytest.raises(EmptyMemory):
            ReplayMemory().sample(np.random.default_rng(0))

    def test_sample_uses_one_uniform(self):
        mem = ReplayMemory()
        for i in range(10):
            mem.push((i, 0.0, i))
        rng, twin = np.random.default_rng(3), np.random.default_rng(3)
        for _ in range(50):
            got = mem.sample(rng)
            assert got.state == int(twin.random() * 10)

    def test_uniform_histogram(self):
        mem = ReplayMemory()
        for i in range(8):
            mem.push((i, 0.0, i))
        rng = np.random.default_rng(11)
        counts = np.bincount([mem.sample(rng).state for _ in range(16000)], minlength=8)
        assert stats.chisquare(counts).pvalue > 1e-3


class TestReplaySteps:
    def test_k_zero_leaves_learner_unchanged(self, mrp20):
        L = Learner(LearnerConfig("td0"), 20, 0.9)
        mem = ReplayMemory()
        mem.push((0, 1.0, 1))
        L.step((0, 1.0, 1))
        before = L.value_estimate()
        replay_step(mem, L, 0, np.random.default_rng(0))
        np.testing.assert_array_equal(L.value_estimate(), before)
        assert L.step_count == 1

    def test_empty_memory(self):
        with pytest.raises(EmptyMemory):
            replay_step(ReplayMemory(), Learner(LearnerConfig("td0"), 3, 0.9), 1, np.random.default_rng(0))

    def test_refuses_eligibility_traces(self):
        mem = ReplayMemory()
        mem.push((0, 0.0, 1))
        with pytest.raises(ConfigError):
            replay_step(mem, Learner(LearnerConfig("td_lambda"), 3, 0.9), 1, np.random.default_rng(0))

    def test_replay_does_not_advance_global_step(self, mrp20):
        L = Learner(LearnerConfig("td_source_sr"), 20, 0.9)
        mem, rng = ReplayMemory(), np.random.default_rng(0)
        for t in sample_trajectory(mrp20, 30, stream(0, "trajectory")):
            real_step(mem, L, t, 3, rng)
        assert L.step_count == 30 and len(mem) == 30

    def test_counts_follow_model_flag(self, mrp20):
        traj = sample_trajectory(mrp20, 50, stream(0, "trajectory"))
        totals = {}
        for learns in (True, False):
            L = Learner(LearnerConfig("td_source_sr", replay_learns_model=learns), 20, 0.9)
            mem, rng = ReplayMemory(), np.random.default_rng(1)
            for t in traj:
                real_step(mem, L, t, 2, rng)
            totals[learns] = int(L.state.counts.sum())
        assert totals[False] == 51
        assert totals[True] == 51 + 100

    def test_td0_replay_is_extra_backups(self, mrp20):
        # with k = 3 a TD(0) learner sees each real transition followed by three stored ones
        traj = sample_trajectory(mrp20, 100, stream(2, "trajectory"))
        u = np.random.default_rng(5).random(300)
        v = np.zeros(20)
        seen = []
        for t, (i, r, j) in enumerate(traj):
            seen.append((i, r, j))
            backups = [(i, r, j)] + [seen[int(u[3 * t + q] * len(seen))] for q in range(3)]
            for a, b, c in backups:
                v[a] += 0.1 * (b + 0.9 * v[c] - v[a])
        L = Learner(LearnerConfig("td0", alpha=fixed(0.1), replay=3), 20, 0.9)
        L.run(traj, [100], exact_value(mrp20), replay_rng=np.random.default_rng(5))
        np.testing.assert_allclose(L.value_estimate(), v, rtol=1e-12, atol=1e-14)

    def test_replay_helps_td0(self, grid64):
        # more backups per real step should lower the error of a slow learner
        traj = sample_trajectory(grid64, 3000, stream(7, "trajectory"))
        v_star = exact_value(grid64)
        errs = []
        for k in (0, 3):
            L = Learner(LearnerConfig("td0", alpha=fixed(0.05), replay=k), 64, grid64.gamma)
            e, _, _ = L.run(traj, [3000], v_star, replay_rng=stream(7, "replay"))
            errs.append(e[-1])
        assert errs[1] < errs[0]
