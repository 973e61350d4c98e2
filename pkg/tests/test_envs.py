from fractions import Fraction

import numpy as np
import pytest

from distmerge.envs import CartPoleEnv, DoorsEnv, DoorsSpec, EpisodeOver, cartpole_dynamics, make_env, reset


def exact_first_step(direction: int):
    """Equations of motion at the upright rest state, in exact rationals.

    With theta = theta_dot = 0: sin = 0, cos = 1.
    """
    g, mc, mp, half, force, tau = (Fraction(98, 10), Fraction(1), Fraction(1, 10), Fraction(1, 2),
                                   Fraction(10) * direction, Fraction(2, 100))
    total = mc + mp
    temp = force / total
    theta_acc = (-temp) / (half * (Fraction(4, 3) - mp / total))
    x_acc = temp - mp * half * theta_acc / total
    return (0, tau * x_acc, 0, tau * theta_acc)


class TestCartPole:
    def test_reset_deterministic(self):
        a = reset("cartpole", seed=3).observation
        b = reset("cartpole", seed=3).observation
        np.testing.assert_array_equal(a, b)

    def test_reset_range(self):
        for seed in range(50):
            obs = reset("cartpole", seed=seed).observation
            assert obs.shape == (4,)
            assert np.all(np.abs(obs) <= 0.05)

    def test_push_right_from_rest(self):
        expected = [float(v) for v in exact_first_step(+1)]
        assert expected[1] == pytest.approx(0.19512, abs=1e-5)
        assert expected[3] == pytest.approx(-0.29268, abs=1e-5)
        env = CartPoleEnv()
        env.set_state((0.0, 0.0, 0.0, 0.0))
        obs, reward, done = env.step(1)
        np.testing.assert_allclose(obs, expected, atol=1e-12)
        assert reward == 1.0 and not done

    def test_push_left_is_mirror(self):
        right = cartpole_dynamics((0.0, 0.0, 0.0, 0.0), 1)
        left = cartpole_dynamics((0.0, 0.0, 0.0, 0.0), 0)
        assert left[1] == -right[1] and left[3] == -right[3]

    def test_out_of_bounds_terminates(self):
        env = CartPoleEnv()
        env.set_state((2.5, 0.0, 0.0, 0.0))
        assert env.step(0).done

    def test_angle_terminates(self):
        env = CartPoleEnv()
        env.set_state((0.0, 0.0, 0.25, 0.0))
        assert env.step(1).done

    def test_step_after_done_rejected(self):
        env = CartPoleEnv()
        env.set_state((2.5, 0.0, 0.0, 0.0))
        env.step(0)
        with pytest.raises(EpisodeOver):
            env.step(0)

    def test_invalid_action(self):
        env = reset("cartpole", seed=0)
        with pytest.raises(ValueError):
            env.step(2)

    def test_episode_capped_and_reward_equals_length(self):
        # hand-tuned balancing controller survives to the cap
        env = reset("cartpole", seed=1)
        total, steps, done = 0.0, 0, False
        obs = env.observation
        while not done:
            action = int(obs[2] + 0.5 * obs[3] + 0.05 * obs[0] + 0.1 * obs[1] > 0)
            obs, r, done = env.step(action)
            total += r
            steps += 1
        assert steps == 500
        assert total == steps

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(0)
        actions = rng.integers(0, 2, size=200)

        def play():
            env = reset("cartpole", seed=11)
            traj = [env.observation]
            for a in actions:
                obs, _, done = env.step(int(a))
                traj.append(obs)
                if done:
                    env.reset()
            return np.array(traj)

        assert play().tobytes() == play().tobytes()


class TestDoors:
    def test_reset(self):
        env = reset("doors", seed=0)
        assert not env.done and env.step_count == 0
        np.testing.assert_array_equal(env.observation, np.ones(1))

    def test_jackpot(self):
        env = reset("doors", seed=0)
        assert env.step(7).reward == 1000.0

    def test_periodic_door(self):
        env = reset("doors", seed=0, num_doors=8, period=3)
        assert env.step(2).reward == 4.5
        assert env.step(5).reward == 4.5

    def test_base_door(self):
        env = reset("doors", seed=0, num_doors=8, period=3)
        assert env.step(0).reward == 1.5

    def test_jackpot_wins_over_period(self):
        spec = DoorsSpec(num_doors=9, period=3)
        assert spec.reward(8) == 1000.0
        assert spec.reward(5) == 4.5

    def test_episode_length(self):
        env = DoorsEnv(episode_length=16)
        env.reset(seed=0)
        dones = [env.step(0).done for _ in range(16)]
        assert dones == [False] * 15 + [True]
        with pytest.raises(EpisodeOver):
            env.step(0)

    def test_out_of_range(self):
        env = reset("doors", seed=0)
        with pytest.raises(ValueError):
            env.step(8)
        with pytest.raises(ValueError):
            env.step(-1)


def test_unknown_env():
    with pytest.raises(ValueError):
        make_env("lunarlander")
