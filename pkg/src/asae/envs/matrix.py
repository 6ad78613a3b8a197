"""Single-state cooperative matrix games and their exact Q oracle."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import CapacityError, DimensionError
from ..validation import check_distribution
from .base import StochasticGame

MAX_ENUMERATION = 10**6


@dataclass
class MatrixGameSpec:
    """Payoff tensor with one axis per agent, repeated for ``steps`` rounds."""

    payoff: np.ndarray
    steps: int = 1

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=np.float64)
        if self.payoff.ndim < 1:
            raise DimensionError("payoff needs one axis per agent")
        if len(set(self.payoff.shape)) != 1 or self.payoff.shape[0] < 1:
            raise DimensionError(f"every agent needs the same number of actions, got payoff shape {self.payoff.shape}")
        if not np.all(np.isfinite(self.payoff)):
            raise ValueError("payoff entries must be finite")
        if int(self.steps) < 1:
            raise ValueError("steps must be at least 1")
        self.steps = int(self.steps)

    @property
    def n_agents(self):
        return self.payoff.ndim

    @property
    def n_actions(self):
        return self.payoff.shape[0]


class MatrixGame(StochasticGame):
    """Repeated matrix game.

    The state is ``[1, t/steps]``, so a one-step game has a single constant
    state. Each observation is a constant feature, the agent id and the last
    joint action.
    """

    env_id = "matrix"

    def __init__(self, payoff, steps=1, gamma=0.99):
        super().__init__()
        self.spec = MatrixGameSpec(payoff, steps)
        self.n_agents = self.spec.n_agents
        self.n_actions = self.spec.n_actions
        self.horizon = self.spec.steps
        self.gamma = float(gamma)
        self.state_dim = 2
        self.obs_dim = 1 + self.n_agents + self.n_agents * self.n_actions

    def params(self):
        return {"payoff": self.spec.payoff.tolist(), "steps": self.spec.steps, "gamma": self.gamma}

    def _state(self):
        return np.array([1.0, self.t / self.spec.steps])

    def _observations(self):
        tail = self._last_action_block()
        return np.stack([np.concatenate(([1.0], self._id_block(a), tail)) for a in range(self.n_agents)])

    def reset(self, rng=None):
        self.t = 0
        self.last_joint_action = None
        return self._state(), self._observations()

    def step(self, joint_action):
        joint = self._check_joint(joint_action)
        reward = float(self.spec.payoff[tuple(joint)])
        self.t += 1
        self.last_joint_action = joint
        done = self.t >= self.spec.steps
        return self._state(), self._observations(), reward, done, {}

    def expert_action(self, rng=None):
        return np.array(np.unravel_index(np.argmax(self.spec.payoff), self.spec.payoff.shape), dtype=np.int64)


def coordination_game(gamma=0.99):
    """Two agents must both pick action 0 for the best payoff."""
    return MatrixGame([[1.0, 0.0], [0.0, 0.5]], gamma=gamma)


def dummy_agent_game(gamma=0.99):
    """Only agent 0's action matters; agent 1 is a bystander."""
    row = np.array([0.2, 1.0, 0.5])
    return MatrixGame(np.repeat(row[:, None], 3, axis=1), gamma=gamma)


def joint_action_weights(policies):
    """Product distribution ``prod_o pi^o(u^o)`` as a tensor over joint actions."""
    weights = np.ones(())
    for p in policies:
        weights = np.multiply.outer(weights, np.asarray(p, dtype=np.float64))
    return weights


def exact_joint_q(spec, policies=None, gamma=0.99, all_steps=False):
    """Exact ``Q(s_t, u)`` for a repeated matrix game under fixed policies.

    The payoff does not depend on the state, so the value of the remaining
    ``steps - t - 1`` rounds is the policy-weighted mean payoff, discounted.
    Returns the table for ``t = 0`` or, with ``all_steps``, one table per round.
    """
    if not isinstance(spec, MatrixGameSpec):
        spec = MatrixGameSpec(spec)
    size = spec.payoff.size * spec.steps
    if size >= MAX_ENUMERATION:
        raise CapacityError(f"joint table has {size} entries; limit is {MAX_ENUMERATION}")
    if spec.steps > 1 and policies is None:
        raise ValueError("policies are required for games longer than one step")
    mean_payoff = 0.0
    if policies is not None:
        if len(policies) != spec.n_agents:
            raise DimensionError(f"need {spec.n_agents} policies, got {len(policies)}")
        policies = [check_distribution(p, f"policy of agent {i}", length=spec.n_actions) for i, p in enumerate(policies)]
        mean_payoff = float((joint_action_weights(policies) * spec.payoff).sum())
    tables = []
    for t in range(spec.steps):
        remaining = spec.steps - t - 1
        future = sum(gamma**k for k in range(1, remaining + 1)) * mean_payoff
        tables.append(spec.payoff + future)
    return np.stack(tables) if all_steps else tables[0]
