"""Decentralized rollout collection into flat trajectory batches."""

import copy
from dataclasses import dataclass, field

import numpy as np

from ..diffmath import sample_categorical
from ..exceptions import DataError, DimensionError
from ..validation import check_rng


def discounted_returns(rewards, dones, gamma):
    """``G_t = r_t + gamma * G_{t+1}``, restarting after every ``done``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    running = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        if dones[i]:
            running = 0.0
        running = rewards[i] + gamma * running
        out[i] = running
    return out


@dataclass
class TrajectoryBatch:
    """Timesteps of several episodes, flattened in episode order.

    Row ``i`` holds one joint step. Per-agent arrays carry an agent axis after
    the row axis. ``probs`` stores every agent's full behaviour distribution
    so counterfactual samples can be drawn later without re-running actors.
    """

    states: np.ndarray  # [N, state_dim]
    obs: np.ndarray  # [N, n, obs_dim]
    actions: np.ndarray  # [N, n]
    log_probs: np.ndarray  # [N, n]
    probs: np.ndarray  # [N, n, n_actions]
    rewards: np.ndarray  # [N]
    dones: np.ndarray  # [N]
    alive: np.ndarray  # [N, n]
    episode: np.ndarray  # [N]
    t: np.ndarray  # [N]
    gamma: float
    wins: np.ndarray = None  # [episodes], NaN when the game has no win condition
    snapshot_digest: str = ""
    returns: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.returns is None:
            self.returns = discounted_returns(self.rewards, self.dones, self.gamma)

    def __len__(self):
        return len(self.rewards)

    @property
    def n_agents(self):
        return self.actions.shape[1]

    @property
    def n_actions(self):
        return self.probs.shape[2]

    @property
    def n_episodes(self):
        return int(self.episode.max()) + 1 if len(self) else 0

    def episode_returns(self):
        """Undiscounted return of every episode."""
        return np.bincount(self.episode, weights=self.rewards, minlength=self.n_episodes)

    def next_index(self):
        """Row of ``s_{t+1}`` for every row, or -1 at episode ends."""
        nxt = np.arange(1, len(self) + 1)
        nxt[self.dones] = -1
        if len(self) and not self.dones[-1]:
            raise DataError("last row of the batch is not terminal, so its next state is missing")
        return nxt

    def validate(self, snapshot=None, atol=1e-10):
        n = len(self)
        for name in ("states", "obs", "actions", "log_probs", "probs", "dones", "alive", "episode", "t", "returns"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if not (np.all(np.isfinite(self.rewards)) and np.all(np.isfinite(self.obs))):
            raise DataError("non-finite rewards or observations")
        expected = self.rewards.copy()
        cont = ~self.dones[:-1]
        expected[:-1][cont] += self.gamma * self.returns[1:][cont]
        if not np.array_equal(expected, self.returns):
            raise DataError("returns do not satisfy G_t = r_t + gamma * G_{t+1}")
        if snapshot is not None:
            for a in range(self.n_agents):
                lp = snapshot.log_probs(a, self.obs[:, a], self.actions[:, a])
                if np.max(np.abs(lp - self.log_probs[:, a]), initial=0.0) > atol:
                    raise DataError(f"stored log-probabilities of agent {a} do not match the snapshot")
        return self

    def subset(self, rows):
        rows = np.asarray(rows)
        return TrajectoryBatch(
            self.states[rows], self.obs[rows], self.actions[rows], self.log_probs[rows], self.probs[rows],
            self.rewards[rows], self.dones[rows], self.alive[rows], self.episode[rows], self.t[rows], self.gamma,
            wins=self.wins, snapshot_digest=self.snapshot_digest, returns=self.returns[rows],
        )


def collect_rollouts(game, policy, n_episodes, rng=None, greedy=False):
    """Play ``n_episodes`` episodes with every agent acting on its own observation.

    ``policy`` is anything with ``probs(agent, obs_rows)`` (normally a
    :class:`~asae.policy.PolicySnapshot`). Episodes run in lockstep on
    independent copies of ``game`` and are stored in episode order.
    """
    rng = check_rng(rng)
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    n, n_actions = game.n_agents, game.n_actions
    if getattr(policy, "n_actions", n_actions) != n_actions:
        raise DimensionError(f"actors output {policy.n_actions} actions but the game has {n_actions}")
    envs = [copy.deepcopy(game) for _ in range(n_episodes)]
    cur_state, cur_obs = [], []
    for env in envs:
        s, o = env.reset(rng)
        cur_state.append(s)
        cur_obs.append(o)
    steps = [[] for _ in range(n_episodes)]
    wins = np.full(n_episodes, np.nan)
    active = list(range(n_episodes))
    for t in range(game.horizon + 1):
        if not active:
            break
        if t == game.horizon:
            raise RuntimeError(f"episodes {active} ran past the horizon {game.horizon} without terminating")
        obs = np.stack([cur_obs[i] for i in active])
        probs = np.stack([policy.probs(a, obs[:, a]) for a in range(n)], axis=1)
        if greedy:
            actions = probs.argmax(axis=-1)
            logp = np.log(np.take_along_axis(probs, actions[..., None], axis=-1)[..., 0])
        else:
            flat_a, flat_lp = sample_categorical(probs.reshape(-1, n_actions), rng)
            actions, logp = flat_a.reshape(-1, n), flat_lp.reshape(-1, n)
        still = []
        for k, i in enumerate(active):
            env = envs[i]
            alive = env.alive().copy()
            s_next, o_next, r, done, info = env.step(actions[k])
            steps[i].append((cur_state[i], obs[k], actions[k], logp[k], probs[k], r, done, alive, t))
            cur_state[i], cur_obs[i] = s_next, o_next
            if done:
                if game.has_win_condition:
                    wins[i] = float(info.get("win", False))
            else:
                still.append(i)
        active = still

    rows = [(e,) + step for e in range(n_episodes) for step in steps[e]]
    batch = TrajectoryBatch(
        states=np.array([r[1] for r in rows]),
        obs=np.array([r[2] for r in rows]),
        actions=np.array([r[3] for r in rows], dtype=np.int64),
        log_probs=np.array([r[4] for r in rows]),
        probs=np.array([r[5] for r in rows]),
        rewards=np.array([r[6] for r in rows], dtype=np.float64),
        dones=np.array([r[7] for r in rows], dtype=bool),
        alive=np.array([r[8] for r in rows], dtype=bool),
        episode=np.array([r[0] for r in rows], dtype=np.int64),
        t=np.array([r[9] for r in rows], dtype=np.int64),
        gamma=game.gamma,
        wins=wins,
        snapshot_digest=getattr(policy, "digest", ""),
    )
    return batch


def collect_expert_rollouts(game, n_episodes, rng=None):
    """Episodes played by the game's scripted policy, stored as one-hot behaviour.

    Only meant for critic warm-up; the stored log-probabilities are zero.
    """
    rng = check_rng(rng)
    n, n_actions = game.n_agents, game.n_actions
    rows = []
    wins = np.full(n_episodes, np.nan)
    for e in range(n_episodes):
        env = copy.deepcopy(game)
        state, obs = env.reset(rng)
        for t in range(game.horizon):
            joint = env.expert_action(rng)
            alive = env.alive().copy()
            probs = np.zeros((n, n_actions))
            probs[np.arange(n), joint] = 1.0
            s_next, o_next, r, done, info = env.step(joint)
            rows.append((e, state, obs, joint, np.zeros(n), probs, r, done, alive, t))
            state, obs = s_next, o_next
            if done:
                if game.has_win_condition:
                    wins[e] = float(info.get("win", False))
                break
        else:
            raise RuntimeError(f"expert episode {e} ran past the horizon without terminating")
    cols = list(zip(*rows))
    return TrajectoryBatch(
        states=np.array(cols[1]), obs=np.array(cols[2]), actions=np.array(cols[3], dtype=np.int64),
        log_probs=np.array(cols[4]), probs=np.array(cols[5]), rewards=np.array(cols[6], dtype=np.float64),
        dones=np.array(cols[7], dtype=bool), alive=np.array(cols[8], dtype=bool),
        episode=np.array(cols[0], dtype=np.int64), t=np.array(cols[9], dtype=np.int64), gamma=game.gamma,
        wins=wins, snapshot_digest="expert",
    )
