"""Environment dynamics, determinism, and the value-iteration oracle."""

import numpy as np
import pytest

from a2d.envs import (
    Bandit,
    ChainMDP,
    GridPixels,
    greedy_policy,
    make_env,
    oracle_values,
    uniform_policy,
)
from a2d.errors import EnvError


def test_chain_right_moves_toward_terminal():
    env = ChainMDP(5)
    env.reset(seed=0)
    assert env.pos == 2
    tr = env.step(1)
    assert env.pos == 3 and tr.reward == 0.0 and not tr.done
    tr = env.step(1)
    assert tr.reward == 1.0 and tr.done


def test_chain_left_wall_reflects():
    env = ChainMDP(5)
    env.reset(seed=0)
    for _ in range(5):
        tr = env.step(0)
    assert env.pos == 0 and not tr.done


def test_grid_step_into_goal_terminates():
    env = GridPixels(n=6, random_start=False)
    env.reset(seed=0)
    env.pos = (5, 4)  # directly left of the goal
    tr = env.step(3)
    assert tr.reward == 1.0 and tr.done


def test_grid_blocked_moves_stay():
    env = GridPixels(n=6, random_start=False)
    env.reset(seed=0)
    env.pos = (0, 0)
    tr = env.step(0)  # up into the border
    assert env.pos == (0, 0) and not tr.done


def test_bandit_mean_reward_law_of_large_numbers():
    env = Bandit((0.2, 0.8))
    env.reset(seed=123)
    total = 0.0
    n = 100_000
    for _ in range(n):
        total += env.step(1).reward
        env.reset()
    assert abs(total / n - 0.8) < 0.01


def test_reset_deterministic_for_seed():
    for env in (ChainMDP(7), GridPixels(n=6, wall_density=0.2, layout_seed=3), Bandit()):
        a = env.reset(seed=99, null_op_max=0)
        b = env.reset(seed=99, null_op_max=0)
        assert a.tobytes() == b.tobytes()


def test_seed_and_actions_determine_transitions():
    def run():
        env = GridPixels(n=6, wall_density=0.2, layout_seed=3)
        env.reset(seed=5)
        out = []
        actions = np.random.default_rng(0).integers(0, 4, 30)
        for a in actions:
            tr = env.step(int(a))
            out.append((tr.reward, tr.done, tr.next_state.tobytes()))
            if tr.done:
                env.reset()
        return out

    assert run() == run()


def test_null_op_start_distribution_on_chain():
    # no-op = left; start 4 on a 9-chain, k ~ U{0..3} -> start in {1,2,3,4},
    # each with probability 1/4 (enumerated oracle)
    env = ChainMDP(9)
    counts = {1: 0, 2: 0, 3: 0, 4: 0}
    n = 4000
    for i in range(n):
        obs = env.reset(seed=i, null_op_max=3)
        counts[int(np.argmax(obs))] += 1
    for state, c in counts.items():
        assert abs(c / n - 0.25) < 0.04, (state, c)


def test_null_op_prefix_never_consumes_episode_budget():
    env = ChainMDP(5, max_episode_steps=3)
    env.reset(seed=0, null_op_max=10)
    for _ in range(3):
        tr = env.step(0)
    assert tr.done  # exactly max_episode_steps after the prefix


def test_step_after_done_raises():
    env = Bandit()
    env.reset(seed=0)
    env.step(0)
    with pytest.raises(EnvError):
        env.step(0)


def test_out_of_range_action_raises():
    env = ChainMDP(5)
    env.reset(seed=0)
    with pytest.raises(EnvError):
        env.step(2)


def test_episode_length_never_exceeds_cap():
    env = GridPixels(n=6, wall_density=0.2, layout_seed=3, max_episode_steps=17)
    env.reset(seed=1)
    steps = 0
    done = False
    while not done:
        done = env.step(0).done
        steps += 1
    assert steps <= 17


def test_chain_optimal_values_geometric():
    # terminal reward 1 at the far right; moving right from s takes
    # (n-1-s) steps, the reward arriving with discount gamma^(n-2-s)
    env = ChainMDP(10, discount=0.99)
    v = oracle_values(env)
    want = np.array([0.99 ** (10 - 2 - s) for s in range(9)])
    np.testing.assert_allclose(v, want, rtol=0, atol=1e-10)


def test_zero_discount_gives_expected_immediate_reward():
    env = Bandit((0.2, 0.8))
    v = oracle_values(env, gamma=0.0)
    assert v[0] == pytest.approx(0.8)
    v_pi = oracle_values(env, policy=np.array([[0.5, 0.5]]), gamma=0.0)
    assert v_pi[0] == pytest.approx(0.5)


def test_grid_optimal_values_match_closed_form():
    # no walls: V*(cell) = gamma^(d-1) - p * (1 - gamma^(d-1)) / (1 - gamma)
    # with d the manhattan distance to the goal
    env = GridPixels(n=6, wall_density=0.0, step_penalty=0.01, discount=0.99)
    v = oracle_values(env)
    for (r, c), got in zip(env.states(), v):
        d = (env.n - 1 - r) + (env.n - 1 - c)
        geom = 0.99 ** (d - 1)
        want = geom - 0.01 * (1 - geom) / (1 - 0.99)
        assert got == pytest.approx(want, abs=1e-9), (r, c)


def test_oracle_matches_monte_carlo_returns_on_chain():
    env = ChainMDP(5, discount=0.95)
    policy = uniform_policy(env)
    v = oracle_values(env, policy=policy)
    start_index = env.states().index(env.n // 2)
    rng = np.random.default_rng(0)
    returns = []
    episodes = 20_000
    for i in range(episodes):
        env.reset(seed=int(rng.integers(2**31)))
        g, disc, done = 0.0, 1.0, False
        while not done:
            tr = env.step(int(rng.integers(2)))
            g += disc * tr.reward
            disc *= 0.95
            done = tr.done
        returns.append(g)
    returns = np.asarray(returns)
    se = returns.std() / np.sqrt(episodes)
    assert abs(returns.mean() - v[start_index]) < 3 * se


def test_oracle_matches_monte_carlo_under_optimal_grid_policy():
    params = dict(n=6, wall_density=0.2, layout_seed=3, step_penalty=0.0, discount=0.99)
    env = GridPixels(**params)
    policy = greedy_policy(env)
    v = oracle_values(env, policy=policy)
    index = {s: i for i, s in enumerate(env.states())}
    rng = np.random.default_rng(1)
    diffs, count = [], 4000
    returns = []
    expected = []
    for i in range(count):
        obs = env.reset(seed=int(rng.integers(2**31)))
        start = env.decode_obs(obs)
        expected.append(v[index[start]])
        g, disc, done = 0.0, 1.0, False
        while not done:
            a = int(np.argmax(policy[index[env.pos]]))
            tr = env.step(a)
            g += disc * tr.reward
            disc *= 0.99
            done = tr.done
        returns.append(g)
    returns, expected = np.asarray(returns), np.asarray(expected)
    resid = returns - expected
    se = returns.std() / np.sqrt(count) + 1e-12
    assert abs(resid.mean()) < 3 * se + 1e-9


def test_make_env_registry():
    env = make_env("chain", n=6)
    assert env.spec.name == "chain-6"
    with pytest.raises(EnvError):
        make_env("atari")


def test_obs_values_in_unit_interval():
    for env in (ChainMDP(6), GridPixels(n=6, wall_density=0.3, layout_seed=8), Bandit()):
        obs = env.reset(seed=0)
        assert obs.min() >= 0.0 and obs.max() <= 1.0
