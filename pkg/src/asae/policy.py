"""Frozen joint policies used for sampling, probability ratios and KL checks."""

import hashlib

import numpy as np

from .diffmath import forward_mlp, log_softmax, softmax
from .exceptions import DimensionError


class PolicySnapshot:
    """Read-only copies of every agent's actor parameters.

    Agent ``a`` acts from its own observation only, so ``probs(a, obs)``
    takes the observation rows of that agent. ``digest`` identifies the
    snapshot and is what the synchronous-update audit compares.
    """

    def __init__(self, actors):
        if not actors:
            raise ValueError("a snapshot needs at least one actor")
        frozen = []
        for params in actors:
            params = params.copy()
            for arr in params.arrays():
                arr.setflags(write=False)
            frozen.append(params)
        n_actions = {p.n_outputs for p in frozen}
        if len(n_actions) != 1:
            raise DimensionError(f"actors disagree on the action count: {sorted(n_actions)}")
        self._actors = tuple(frozen)
        self.digest = self.recompute_digest()

    def recompute_digest(self):
        h = hashlib.sha256()
        for p in self._actors:
            h.update(p.digest().encode())
        return h.hexdigest()

    def __repr__(self):
        return f"PolicySnapshot(n_agents={self.n_agents}, digest={self.digest[:12]})"

    @property
    def n_agents(self):
        return len(self._actors)

    @property
    def n_actions(self):
        return self._actors[0].n_outputs

    @property
    def obs_dim(self):
        return self._actors[0].n_inputs

    def actor(self, agent):
        return self._actors[agent]

    def actors(self):
        """Writable copies of the actor parameters."""
        return [p.copy() for p in self._actors]

    def logits(self, agent, obs):
        return forward_mlp(self._actors[agent], obs)

    def probs(self, agent, obs):
        return softmax(self.logits(agent, obs))

    def log_probs(self, agent, obs, actions):
        lp = log_softmax(self.logits(agent, np.atleast_2d(obs)))
        return lp[np.arange(lp.shape[0]), np.asarray(actions, dtype=np.int64)]

    def joint_probs(self, obs):
        """Per-agent distributions for a batch of joint observations ``[B, n, obs_dim]``."""
        obs = np.asarray(obs, dtype=np.float64)
        return np.stack([self.probs(a, obs[:, a]) for a in range(self.n_agents)], axis=1)
