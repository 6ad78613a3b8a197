"""The cooperative stochastic game contract."""

from abc import ABC, abstractmethod

import numpy as np

from ..validation import check_joint_action


class StochasticGame(ABC):
    """Partially observable cooperative game with a shared reward.

    Subclasses set ``n_agents``, ``n_actions``, ``state_dim``, ``obs_dim``,
    ``horizon`` and ``gamma``. ``step`` consumes exactly one action per agent
    and returns ``(state, observations, reward, done, info)``; observations
    have shape ``[n_agents, obs_dim]`` and ``info`` carries ``"win"`` for games
    with a win condition.
    """

    env_id = "abstract"
    has_win_condition = False

    n_agents: int
    n_actions: int
    state_dim: int
    obs_dim: int
    horizon: int
    gamma: float

    def __init__(self):
        self.t = 0
        self.last_joint_action = None

    @abstractmethod
    def reset(self, rng):
        """Start a fresh episode; return ``(state, observations)``."""

    @abstractmethod
    def step(self, joint_action):
        """Advance one step; return ``(state, observations, reward, done, info)``."""

    @abstractmethod
    def params(self):
        """JSON-serializable constructor arguments (used in checkpoints)."""

    def alive(self):
        return np.ones(self.n_agents, dtype=bool)

    def expert_action(self, rng):
        """A scripted joint action for warm-start data, if the game has one."""
        raise NotImplementedError(f"{type(self).__name__} has no scripted policy")

    def _check_joint(self, joint_action):
        return check_joint_action(joint_action, self.n_agents, self.n_actions)

    def _last_action_block(self):
        block = np.zeros(self.n_agents * self.n_actions)
        if self.last_joint_action is not None:
            block[np.arange(self.n_agents) * self.n_actions + self.last_joint_action] = 1.0
        return block

    def _id_block(self, agent):
        ident = np.zeros(self.n_agents)
        ident[agent] = 1.0
        return ident
