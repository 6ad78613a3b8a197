"""Centralized joint-action critic with a per-action output head.

For agent ``a`` the network reads ``[s | one-hot(u^{-a}) | one-hot(a)]`` and
returns one Q value per candidate action of ``a``, so a full counterfactual
sweep over ``a``'s actions costs a single forward pass.
"""

import numpy as np

from .diffmath import Adam, forward_mlp, init_mlp, mlp_gradients, trace_mlp
from .exceptions import DimensionError, TrainingError
from .validation import check_distribution, check_rng, one_hot


def others_of(joint, agent):
    """Drop ``agent``'s column from joint actions ``[..., n]``."""
    joint = np.asarray(joint, dtype=np.int64)
    return np.delete(joint, agent, axis=-1)


class JointQCritic:
    """Q(s, u) estimator for all agents, with a lagged target copy.

    Parameters
    ----------
    state_dim, n_agents, n_actions : int
        Layout of the input encoding.
    hidden : tuple of int
        Hidden layer widths.
    lr : float
        Adam learning rate.
    target_sync : int
        Gradient steps between copies into the target network.
    """

    def __init__(self, state_dim, n_agents, n_actions, hidden=(64, 64), activation="tanh", lr=5e-4,
                 target_sync=50, rng=None, params=None):
        self.state_dim = int(state_dim)
        self.n_agents = int(n_agents)
        self.n_actions = int(n_actions)
        self.input_dim = self.state_dim + (self.n_agents - 1) * self.n_actions + self.n_agents
        if params is None:
            params = init_mlp([self.input_dim, *hidden, self.n_actions], activation, rng)
        if params.n_inputs != self.input_dim or params.n_outputs != self.n_actions:
            raise DimensionError(
                f"critic network maps {params.n_inputs} -> {params.n_outputs}, "
                f"layout needs {self.input_dim} -> {self.n_actions}"
            )
        self.params = params
        self.target = params.copy()
        self.optimizer = Adam(lr=lr)
        self.target_sync = int(target_sync)
        self.n_updates = 0

    def encode(self, states, others, agents):
        """Stack the input blocks for rows of (state, u^{-a}, agent id)."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        others = np.asarray(others, dtype=np.int64)
        if others.size != states.shape[0] * (self.n_agents - 1):
            raise DimensionError(
                f"others-action block needs {self.n_agents - 1} actions per row, got shape {others.shape}"
            )
        others = others.reshape(states.shape[0], self.n_agents - 1)
        agents = np.broadcast_to(np.asarray(agents, dtype=np.int64), (states.shape[0],))
        if states.shape[1] != self.state_dim:
            raise DimensionError(f"state block has width {states.shape[1]}, expected {self.state_dim}")
        if np.any(others < 0) or np.any(others >= self.n_actions):
            raise DimensionError(f"others-action block has an index outside [0, {self.n_actions})")
        if np.any(agents < 0) or np.any(agents >= self.n_agents):
            raise DimensionError(f"agent-id block index outside [0, {self.n_agents})")
        return np.concatenate(
            [states, one_hot(others, self.n_actions).reshape(states.shape[0], -1), one_hot(agents, self.n_agents)],
            axis=1,
        )

    def predict(self, states, others, agents, target=False):
        """Q vectors ``[B, n_actions]`` for a batch of rows."""
        return forward_mlp(self.target if target else self.params, self.encode(states, others, agents))

    def sync_target(self):
        self.target = self.params.copy()

    def step(self, inputs, actions, targets):
        """One Adam step on the squared error of the chosen-action outputs."""
        out, leaves = trace_mlp(self.params, inputs)
        err = out.pick(actions) - targets
        loss = err.square().mean()
        if not np.isfinite(loss.data):
            raise TrainingError("critic loss is not finite")
        self.optimizer.step(self.params, mlp_gradients(self.params, loss, leaves))
        self.n_updates += 1
        if self.target_sync and self.n_updates % self.target_sync == 0:
            self.sync_target()
        return float(loss.data)


def q_values(critic, state, u_minus_a, agent):
    """Q(s, (u^{-a}, k)) for every action ``k`` of ``agent``."""
    return critic.predict(np.asarray(state)[None], np.asarray(u_minus_a)[None], agent)[0]


def joint_q(critic, state, joint_action, agent):
    """Scalar Q(s, u) read through ``agent``'s head."""
    joint = np.asarray(joint_action, dtype=np.int64)
    return float(q_values(critic, state, others_of(joint, agent), agent)[joint[agent]])


def training_rows(critic, batch, targets):
    """Flatten a batch into (inputs, chosen action, target) rows, agent-major."""
    n = batch.n_agents
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(batch), n):
        raise DimensionError(f"targets must have shape {(len(batch), n)}, got {targets.shape}")
    xs = [critic.encode(batch.states, others_of(batch.actions, a), a) for a in range(n)]
    return np.concatenate(xs), batch.actions.T.reshape(-1), targets.T.reshape(-1)


def train_critic(critic, batch, targets, epochs=4, batch_size=256, rng=None):
    """Regress the critic onto per-(row, agent) targets.

    Returns the mean squared error over all training rows after each epoch.
    """
    rng = check_rng(rng)
    x, u, y = training_rows(critic, batch, targets)
    if not np.all(np.isfinite(y)):
        raise TrainingError("critic targets are not finite")
    curve = []
    for _ in range(int(epochs)):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            critic.step(x[idx], u[idx], y[idx])
        pred = forward_mlp(critic.params, x)[np.arange(len(y)), u]
        mse = float(np.mean((pred - y) ** 2))
        if not np.isfinite(mse):
            raise TrainingError("critic loss is not finite")
        curve.append(mse)
    return curve


def monte_carlo_targets(batch):
    """Discounted returns, shared by every agent: shape ``[N, n]``."""
    return np.repeat(batch.returns[:, None], batch.n_agents, axis=1)


def td_lambda_targets(critic, batch, lam):
    """TD(lambda) targets bootstrapped from the target network.

    The bootstrap value of ``s_{t+1}`` for agent ``a`` is the policy-weighted
    target Q with the realized ``u^{-a}_{t+1}``.
    """
    n = batch.n_agents
    nxt = batch.next_index()
    out = np.zeros((len(batch), n))
    for a in range(n):
        q = critic.predict(batch.states, others_of(batch.actions, a), a, target=True)
        v = (q * batch.probs[:, a]).sum(axis=1)
        running = 0.0
        for i in range(len(batch) - 1, -1, -1):
            if nxt[i] < 0:
                running = batch.rewards[i]
            else:
                running = batch.rewards[i] + batch.gamma * ((1.0 - lam) * v[nxt[i]] + lam * running)
            out[i, a] = running
    return out


def state_value(critic, state, others_samples, policy, agent):
    """Average over reorganized samples of the policy-weighted Q of ``agent``.

    ``V(s) = (1/m) sum_j sum_k pi(k) Q(s, u^{-a}_j, k)``.
    """
    others = np.asarray(others_samples, dtype=np.int64)
    if others.ndim == 1:
        others = others[:, None] if critic.n_agents > 1 else others.reshape(-1, 0)
    if others.shape[0] == 0:
        raise ValueError("state_value needs at least one counterfactual sample")
    pi = check_distribution(policy, "policy", length=critic.n_actions)
    states = np.repeat(np.asarray(state, dtype=np.float64)[None], others.shape[0], axis=0)
    q = critic.predict(states, others, agent)
    return float((q @ pi).mean())
