"""Deterministic, seedable toy environments with enumerable-state oracles.

Three tasks stand in for pixel-based control at desk scale: a chain MDP
with analytic values, a Bernoulli bandit, and GridPixels, an N x N
gridworld rendered as a (3, H, W) image (agent / goal / wall channels) so
convolutional feature extractors are meaningful.

Evaluation-time "null-op starts" are emulated by applying a uniformly
drawn count in [0, null_op_max] of the environment's designated no-op
action (action 0) after reset; the prefix never consumes episode budget
and is guarded against accidentally terminating the episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EnvError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_shape: tuple  # (channels, height, width)
    num_actions: int
    max_episode_steps: int
    discount: float

    def __post_init__(self):
        if self.num_actions < 2:
            raise EnvError(f"num_actions must be >= 2, got {self.num_actions}")
        if not 0.0 < self.discount < 1.0:
            raise EnvError(f"discount must lie in (0,1), got {self.discount}")


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class Env:
    """Base contract: seeded reset with optional no-op prefix, stepping,
    and (for enumerable tasks) a transition model for the value oracle."""

    spec: EnvSpec
    NULL_OP = 0

    def __init__(self):
        self._rng = np.random.default_rng(0)
        self._steps = 0
        self._done = True

    # -- per-env dynamics ------------------------------------------------
    def _begin_episode(self):
        raise NotImplementedError

    def _apply(self, action):
        """Advance the internal state; returns (reward, done)."""
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def reset(self, seed=None, null_op_max=0):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._begin_episode()
        if null_op_max > 0:
            k = int(self._rng.integers(0, null_op_max + 1))
            for _ in range(k):
                if self._peek_terminal(self.NULL_OP):
                    break
                self._apply(self.NULL_OP)
        self._steps = 0
        self._done = False
        return self._observe()

    def _peek_terminal(self, action) -> bool:
        """Whether applying `action` would end the episode (no-op guard)."""
        return False

    def step(self, action) -> Transition:
        if self._done:
            raise EnvError(f"{self.spec.name}: step() after episode end; call reset()")
        action = int(action)
        if not 0 <= action < self.spec.num_actions:
            raise EnvError(
                f"{self.spec.name}: action {action} out of range [0, {self.spec.num_actions})"
            )
        state = self._observe()
        reward, done = self._apply(action)
        self._steps += 1
        if self._steps >= self.spec.max_episode_steps:
            done = True
        self._done = done
        return Transition(state, action, float(reward), self._observe(), bool(done))

    # -- oracle interface (enumerable tasks only) ------------------------
    def states(self):
        """Non-terminal state ids, in a fixed order."""
        raise EnvError(f"{self.spec.name}: state space is not enumerable")

    def transition_model(self, state, action):
        """[(prob, next_state, reward, done), ...] for the cap-free MDP."""
        raise EnvError(f"{self.spec.name}: state space is not enumerable")

    def observation_for_state(self, state) -> np.ndarray:
        raise EnvError(f"{self.spec.name}: state space is not enumerable")

    def decode_obs(self, obs):
        """Inverse of observation_for_state (tabular-policy adapters)."""
        raise EnvError(f"{self.spec.name}: state space is not enumerable")


class ChainMDP(Env):
    """States 0..n-1 on a line; start in the middle, absorbing reward-1
    terminal at the far right, reflecting wall at 0.  Action 0 moves left
    (and is the no-op used for randomized starts), action 1 moves right."""

    def __init__(self, n=10, discount=0.99, max_episode_steps=None):
        super().__init__()
        if n < 3:
            raise EnvError(f"chain needs n >= 3, got {n}")
        self.n = n
        self.spec = EnvSpec(
            name=f"chain-{n}",
            obs_shape=(1, 1, n),
            num_actions=2,
            max_episode_steps=max_episode_steps or 20 * n,
            discount=discount,
        )
        self.pos = n // 2

    def _begin_episode(self):
        self.pos = self.n // 2

    def _apply(self, action):
        if action == 0:
            self.pos = max(0, self.pos - 1)
        else:
            self.pos = min(self.n - 1, self.pos + 1)
        if self.pos == self.n - 1:
            return 1.0, True
        return 0.0, False

    def _peek_terminal(self, action):
        return action == 1 and self.pos + 1 == self.n - 1

    def _observe(self):
        obs = np.zeros(self.spec.obs_shape)
        obs[0, 0, self.pos] = 1.0
        return obs

    def states(self):
        return list(range(self.n - 1))

    def transition_model(self, state, action):
        nxt = max(0, state - 1) if action == 0 else state + 1
        if nxt == self.n - 1:
            return [(1.0, nxt, 1.0, True)]
        return [(1.0, nxt, 0.0, False)]

    def observation_for_state(self, state):
        obs = np.zeros(self.spec.obs_shape)
        obs[0, 0, state] = 1.0
        return obs

    def decode_obs(self, obs):
        return int(np.argmax(obs[0, 0]))


class Bandit(Env):
    """Single-state Bernoulli bandit; every pull ends the episode.  The
    no-op prefix is skipped (there is only one state to decorrelate)."""

    def __init__(self, probs=(0.2, 0.8), discount=0.99):
        super().__init__()
        self.probs = tuple(float(p) for p in probs)
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise EnvError(f"bandit probabilities must lie in [0,1], got {probs}")
        self.spec = EnvSpec(
            name=f"bandit-{len(self.probs)}",
            obs_shape=(1, 1, 1),
            num_actions=len(self.probs),
            max_episode_steps=1,
            discount=discount,
        )

    def reset(self, seed=None, null_op_max=0):
        return super().reset(seed=seed, null_op_max=0)

    def _begin_episode(self):
        pass

    def _apply(self, action):
        reward = 1.0 if self._rng.random() < self.probs[action] else 0.0
        return reward, True

    def _observe(self):
        return np.ones(self.spec.obs_shape)

    def states(self):
        return [0]

    def transition_model(self, state, action):
        p = self.probs[action]
        return [(p, 0, 1.0, True), (1.0 - p, 0, 0.0, True)]

    def observation_for_state(self, state):
        return np.ones(self.spec.obs_shape)

    def decode_obs(self, obs):
        return 0


class GridPixels(Env):
    """N x N gridworld rendered as a (3, H, W) image observation.

    Channel 0 marks the agent, channel 1 the goal (bottom-right corner),
    channel 2 the walls.  Moves into walls or borders stay in place;
    entering the goal pays `goal_reward` and ends the episode, every other
    step pays -`step_penalty`.  Difficulty knobs: grid size, wall density,
    and reward sparsity (step_penalty=0).  The wall layout is fixed by
    `layout_seed`; cells the goal cannot reach are filled in so every
    episode is solvable.  Episodes start from a seeded-uniform free cell
    unless random_start is off.
    """

    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right

    def __init__(
        self,
        n=6,
        obs_hw=12,
        wall_density=0.0,
        layout_seed=0,
        step_penalty=0.01,
        goal_reward=1.0,
        max_episode_steps=None,
        discount=0.99,
        random_start=True,
    ):
        super().__init__()
        if obs_hw % n != 0:
            raise EnvError(f"obs_hw {obs_hw} must be a multiple of grid size {n}")
        self.n = n
        self.cell_px = obs_hw // n
        self.goal = (n - 1, n - 1)
        self.step_penalty = float(step_penalty)
        self.goal_reward = float(goal_reward)
        self.random_start = bool(random_start)
        self.walls = self._build_layout(np.random.default_rng(layout_seed), wall_density)
        self.free_cells = [
            (r, c)
            for r in range(n)
            for c in range(n)
            if not self.walls[r, c] and (r, c) != self.goal
        ]
        if not self.free_cells:
            raise EnvError("grid layout has no free start cells")
        self.spec = EnvSpec(
            name=f"grid-{n}x{n}",
            obs_shape=(3, obs_hw, obs_hw),
            num_actions=4,
            max_episode_steps=max_episode_steps or 10 * n,
            discount=discount,
        )
        self.pos = self.free_cells[0]

    def _build_layout(self, rng, density):
        walls = rng.random((self.n, self.n)) < density
        walls[self.goal] = False
        walls[0, 0] = False
        # flood-fill from the goal; unreachable cells become walls
        reach = np.zeros_like(walls)
        frontier = [self.goal]
        reach[self.goal] = True
        while frontier:
            r, c = frontier.pop()
            for dr, dc in self.MOVES:
                rr, cc = r + dr, c + dc
                if 0 <= rr < self.n and 0 <= cc < self.n and not walls[rr, cc] and not reach[rr, cc]:
                    reach[rr, cc] = True
                    frontier.append((rr, cc))
        walls |= ~reach
        walls[self.goal] = False
        return walls

    def _begin_episode(self):
        if self.random_start:
            self.pos = self.free_cells[int(self._rng.integers(len(self.free_cells)))]
        else:
            self.pos = self.free_cells[0]

    def _target(self, action):
        dr, dc = self.MOVES[action]
        rr, cc = self.pos[0] + dr, self.pos[1] + dc
        if 0 <= rr < self.n and 0 <= cc < self.n and not self.walls[rr, cc]:
            return (rr, cc)
        return self.pos

    def _apply(self, action):
        self.pos = self._target(action)
        if self.pos == self.goal:
            return self.goal_reward, True
        return -self.step_penalty, False

    def _peek_terminal(self, action):
        return self._target(action) == self.goal

    def _observe(self):
        obs = np.zeros(self.spec.obs_shape)
        p = self.cell_px

        def paint(ch, r, c):
            obs[ch, r * p : (r + 1) * p, c * p : (c + 1) * p] = 1.0

        paint(0, *self.pos)
        paint(1, *self.goal)
        for r in range(self.n):
            for c in range(self.n):
                if self.walls[r, c]:
                    paint(2, r, c)
        return obs

    def states(self):
        return list(self.free_cells)

    def transition_model(self, state, action):
        saved = self.pos
        self.pos = state
        nxt = self._target(action)
        self.pos = saved
        if nxt == self.goal:
            return [(1.0, nxt, self.goal_reward, True)]
        return [(1.0, nxt, -self.step_penalty, False)]

    def observation_for_state(self, state):
        saved = self.pos
        self.pos = state
        obs = self._observe()
        self.pos = saved
        return obs

    def decode_obs(self, obs):
        r, c = np.argwhere(obs[0] > 0)[0]
        return (int(r) // self.cell_px, int(c) // self.cell_px)


# -- registry -------------------------------------------------------------

ENV_BUILDERS = {
    "chain": ChainMDP,
    "bandit": Bandit,
    "grid_pixels": GridPixels,
}


def make_env(name, **params) -> Env:
    if name not in ENV_BUILDERS:
        raise EnvError(f"unknown environment {name!r}; choose from {sorted(ENV_BUILDERS)}")
    return ENV_BUILDERS[name](**params)


# -- value oracle ---------------------------------------------------------


def oracle_values(env: Env, policy=None, tol=1e-10, max_iter=1_000_000, gamma=None):
    """State values of the cap-free MDP by value iteration.

    `policy`, when given, is an (S, A) row-stochastic array over
    env.states() and the result is V_pi; otherwise the Bellman-optimal V*.
    Converges to sup-norm residual < tol.  `gamma` overrides the spec's
    discount (e.g. 0 for the expected immediate reward).
    """
    states = env.states()
    index = {s: i for i, s in enumerate(states)}
    gamma = env.spec.discount if gamma is None else gamma
    n_actions = env.spec.num_actions
    model = [
        [env.transition_model(s, a) for a in range(n_actions)] for s in states
    ]
    v = np.zeros(len(states))
    for _ in range(max_iter):
        q = np.zeros((len(states), n_actions))
        for i in range(len(states)):
            for a in range(n_actions):
                q[i, a] = np.sum(
                    [
                        p * (r + (0.0 if done else gamma * v[index[ns]]))
                        for p, ns, r, done in model[i][a]
                    ]
                )
        new_v = np.sum(q * policy, axis=1) if policy is not None else q.max(axis=1)
        residual = np.max(np.abs(new_v - v))
        v = new_v
        if residual < tol:
            return v
    raise EnvError(f"value iteration did not reach residual {tol} in {max_iter} sweeps")


def greedy_policy(env: Env, values=None):
    """Deterministic (S, A) policy that is greedy w.r.t. V* (or `values`)."""
    states = env.states()
    index = {s: i for i, s in enumerate(states)}
    v = oracle_values(env) if values is None else values
    gamma = env.spec.discount
    table = np.zeros((len(states), env.spec.num_actions))
    for i, s in enumerate(states):
        q = [
            np.sum(
                [
                    p * (r + (0.0 if done else gamma * v[index[ns]]))
                    for p, ns, r, done in env.transition_model(s, a)
                ]
            )
            for a in range(env.spec.num_actions)
        ]
        table[i, int(np.argmax(q))] = 1.0
    return table


def uniform_policy(env: Env):
    n = env.spec.num_actions
    return np.full((len(env.states()), n), 1.0 / n)
