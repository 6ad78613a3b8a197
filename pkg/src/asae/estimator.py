"""Centralized training of decentralized actors with synchronous updates.

One iteration: roll out under the frozen snapshot, fit the critic, estimate
every agent's marginal advantage against that same snapshot, then update
each actor independently on its clipped surrogate. Only after all actors are
done does a new snapshot get taken, so no agent sees another agent's update
from the same iteration.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .advantage import (
    AdvantageTable,
    EstimatorConfig,
    mc_advantage_table,
    realized_counterfactual_table,
    state_value_table,
    td_residual_advantage,
)
from .critic import JointQCritic, monte_carlo_targets, td_lambda_targets, train_critic
from .diffmath import Adam, entropy, forward_mlp, init_mlp, mlp_gradients, softmax, trace_mlp
from .envs.rollout import collect_expert_rollouts, collect_rollouts
from .exceptions import DimensionError, TrainingError
from .policy import PolicySnapshot
from .trust_region import TrustRegionConfig, batch_kl, clipped_surrogate, restriction_check
from .validation import check_rng

ALGORITHMS = ("asae", "independent-ppo", "coma-async")
# Early stop rejects an actor step whose KL to the snapshot exceeds this multiple of the budget.
KL_STOP_FACTOR = 1.5


@dataclass
class IterationReport:
    iteration: int
    env_steps: int
    mean_return: float
    win_rate: float
    surrogate: np.ndarray
    kl: np.ndarray
    entropy: np.ndarray
    clip_fraction: np.ndarray
    critic_loss: float
    epochs_run: np.ndarray
    snapshot_digest: str
    estimation_digests: list
    audit_violations: int
    restriction_ok: bool


@dataclass
class LoopSettings:
    algorithm: str = "asae"
    batch_episodes: int = 32
    critic_epochs: int = 16
    critic_batch_size: int = 256
    td_lambda: float = None
    normalize_advantages: bool = False


@dataclass
class LearnerState:
    actors: list
    actor_optimizers: list
    critic: JointQCritic
    snapshot: PolicySnapshot
    value_nets: list = field(default_factory=list)
    value_optimizers: list = field(default_factory=list)
    iteration: int = 0
    env_steps: int = 0


def _restore(params, saved):
    for dst, src in zip(params.arrays(), saved.arrays()):
        dst[...] = src


def _fit_value_nets(state, batch, settings, rng):
    """Per-agent local-observation value regression (independent PPO baseline)."""
    losses = []
    for a, (net, opt) in enumerate(zip(state.value_nets, state.value_optimizers)):
        rows = np.flatnonzero(batch.alive[:, a])
        x, y = batch.obs[rows, a], batch.returns[rows]
        for _ in range(settings.critic_epochs):
            order = rng.permutation(len(rows))
            for lo in range(0, len(rows), settings.critic_batch_size):
                idx = order[lo:lo + settings.critic_batch_size]
                out, leaves = trace_mlp(net, x[idx])
                loss = (out.sum(axis=1) - y[idx]).square().mean()
                opt.step(net, mlp_gradients(net, loss, leaves))
        losses.append(float(np.mean((forward_mlp(net, x)[:, 0] - y) ** 2)) if len(rows) else 0.0)
    return float(np.mean(losses))


def estimate_advantages(state, batch, settings, est_config, rng):
    """Advantage table for the configured algorithm and estimator variant."""
    if settings.algorithm == "independent-ppo":
        values = np.stack([forward_mlp(net, batch.obs[:, a])[:, 0] for a, net in enumerate(state.value_nets)],
                          axis=1)
        adv = batch.returns[:, None] - values
        return AdvantageTable(adv, np.zeros_like(adv), 1, "independent", batch.snapshot_digest)
    if settings.algorithm == "coma-async":
        return realized_counterfactual_table(state.critic, batch)
    if est_config.variant == "mc-q":
        return mc_advantage_table(state.critic, batch, est_config.m, rng)
    if est_config.variant.startswith("td-residual"):
        values = state_value_table(state.critic, batch, est_config.m, rng)
        return td_residual_advantage(batch, values, est_config.variant)
    raise ValueError(f"variant {est_config.variant!r} needs an exact Q table and cannot drive training")


def update_actor(params, optimizer, batch, advantages, agent, config, mask, old_probs):
    """Run the actor epochs of one agent; returns (surrogate, clip fraction, epochs run)."""
    clip_fraction, epochs_run = 0.0, 0
    for _ in range(int(config.actor_epochs)):
        saved, opt_state = params.copy(), optimizer.state()
        loss, leaves, cf = clipped_surrogate(params, batch, advantages, agent, config, mask)
        if loss is None:
            break
        optimizer.step(params, mlp_gradients(params, loss, leaves))
        if config.kl_early_stop:
            new_probs = softmax(forward_mlp(params, batch.obs[mask, agent]))
            kl = float(batch_kl(new_probs, old_probs[mask]).mean())
            if kl > KL_STOP_FACTOR * config.kl_budget:
                _restore(params, saved)
                optimizer.load_state(opt_state)
                break
        clip_fraction = cf
        epochs_run += 1
    loss, _, cf_final = clipped_surrogate(params, batch, advantages, agent, config, mask)
    surrogate = 0.0 if loss is None else -float(loss.data)
    if not np.isfinite(surrogate):
        raise TrainingError(f"agent {agent}: surrogate objective is not finite")
    return surrogate, cf_final if epochs_run else clip_fraction, epochs_run


def train_iteration(game, state, tr_config, est_config, settings, rng):
    """One synchronous iteration; mutates ``state`` and returns an :class:`IterationReport`."""
    snapshot = state.snapshot
    n = game.n_agents
    batch = collect_rollouts(game, snapshot, settings.batch_episodes, rng)

    if settings.algorithm == "independent-ppo":
        critic_loss = _fit_value_nets(state, batch, settings, rng)
        advantages = estimate_advantages(state, batch, settings, est_config, rng)
    else:
        if settings.td_lambda is None:
            targets = monte_carlo_targets(batch)
        else:
            targets = td_lambda_targets(state.critic, batch, settings.td_lambda)
        curve = train_critic(state.critic, batch, targets, settings.critic_epochs, settings.critic_batch_size, rng)
        critic_loss = curve[-1] if curve else float("nan")
        advantages = estimate_advantages(state, batch, settings, est_config, rng)

    adv = advantages.values
    if settings.normalize_advantages:
        # One pooled scale for all agents keeps relative credit intact.
        adv = adv / (adv[batch.alive].std() + 1e-8)

    tr = tr_config
    if settings.algorithm == "coma-async":
        tr = TrustRegionConfig(tr.clip_range, tr.kl_budget, tr.n_agents, tr.actor_epochs, False, "unclipped",
                               tr.entropy_coef)
    # Audit: when agent a starts updating, both its advantage table and the
    # frozen policy it is measured against must still be the rollout snapshot.
    estimation_digests = []
    surrogate, clip_fraction, epochs_run = np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64)
    for a in range(n):
        estimation_digests.append((advantages.snapshot_digest, snapshot.recompute_digest()))
        mask = batch.alive[:, a]
        surrogate[a], clip_fraction[a], epochs_run[a] = update_actor(
            state.actors[a], state.actor_optimizers[a], batch, adv[:, a], a, tr, mask, batch.probs[:, a]
        )
    violations = sum(any(d != batch.snapshot_digest for d in pair) for pair in estimation_digests)
    violations += int(batch.snapshot_digest != snapshot.digest)

    restriction = restriction_check(snapshot, state.actors, batch, tr_config, n_states=4)
    ent = np.array([
        entropy(softmax(forward_mlp(state.actors[a], batch.obs[batch.alive[:, a], a]))).mean()
        if batch.alive[:, a].any() else 0.0
        for a in range(n)
    ])
    for a, params in enumerate(state.actors):
        if not all(np.all(np.isfinite(arr)) for arr in params.arrays()):
            raise TrainingError(f"iteration {state.iteration + 1}: actor {a} parameters are not finite")

    state.snapshot = PolicySnapshot(state.actors)
    state.iteration += 1
    state.env_steps += len(batch)
    wins = batch.wins
    return IterationReport(
        iteration=state.iteration,
        env_steps=state.env_steps,
        mean_return=float(batch.episode_returns().mean()),
        win_rate=float(np.mean(wins)) if game.has_win_condition else float("nan"),
        surrogate=surrogate,
        kl=restriction.kl,
        entropy=ent,
        clip_fraction=clip_fraction,
        critic_loss=float(critic_loss),
        epochs_run=epochs_run,
        snapshot_digest=snapshot.digest,
        estimation_digests=estimation_digests,
        audit_violations=int(violations),
        restriction_ok=bool(restriction.within_budget and restriction.joint_bound_holds),
    )


class ASAE(BaseEstimator):
    """Multi-agent policy optimization with approximatively synchronous advantage estimation.

    ``fit(game)`` trains one decentralized actor per agent and a centralized
    joint-action critic; ``predict(observations)`` returns greedy joint
    actions. ``algorithm`` switches to the independent-PPO or asynchronous
    COMA-style baselines while keeping the rest of the loop identical.
    """

    def __init__(
        self,
        algorithm="asae",
        n_iterations=200,
        batch_episodes=32,
        m=50,
        clip_range=0.1,
        kl_budget=0.01,
        kl_early_stop=True,
        actor_epochs=4,
        surrogate="ppo-min",
        entropy_coef=0.0,
        estimator="mc-q",
        actor_hidden=(64,),
        critic_hidden=(64, 64),
        activation="tanh",
        actor_lr=5e-4,
        critic_lr=5e-4,
        critic_epochs=16,
        critic_batch_size=256,
        target_sync=50,
        td_lambda=None,
        normalize_advantages=False,
        warm_start_episodes=0,
        random_state=None,
    ):
        self.algorithm = algorithm
        self.n_iterations = n_iterations
        self.batch_episodes = batch_episodes
        self.m = m
        self.clip_range = clip_range
        self.kl_budget = kl_budget
        self.kl_early_stop = kl_early_stop
        self.actor_epochs = actor_epochs
        self.surrogate = surrogate
        self.entropy_coef = entropy_coef
        self.estimator = estimator
        self.actor_hidden = actor_hidden
        self.critic_hidden = critic_hidden
        self.activation = activation
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.critic_epochs = critic_epochs
        self.critic_batch_size = critic_batch_size
        self.target_sync = target_sync
        self.td_lambda = td_lambda
        self.normalize_advantages = normalize_advantages
        self.warm_start_episodes = warm_start_episodes
        self.random_state = random_state

    def _configs(self, n_agents):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        tr = TrustRegionConfig(self.clip_range, self.kl_budget, n_agents, self.actor_epochs, self.kl_early_stop,
                               self.surrogate, self.entropy_coef)
        est = EstimatorConfig(self.m, self.estimator)
        loop = LoopSettings(self.algorithm, self.batch_episodes, self.critic_epochs, self.critic_batch_size,
                            self.td_lambda, self.normalize_advantages)
        return tr, est, loop

    def initialize(self, game):
        """Build fresh actors, critic and optimizers for ``game``."""
        self.rng_ = check_rng(self.random_state)
        n, u = game.n_agents, game.n_actions
        actors = [init_mlp([game.obs_dim, *self.actor_hidden, u], self.activation, self.rng_, output_scale=0.01)
                  for _ in range(n)]
        critic = JointQCritic(game.state_dim, n, u, self.critic_hidden, self.activation, self.critic_lr,
                              self.target_sync, self.rng_)
        value_nets, value_opts = [], []
        if self.algorithm == "independent-ppo":
            value_nets = [init_mlp([game.obs_dim, *self.critic_hidden, 1], self.activation, self.rng_)
                          for _ in range(n)]
            value_opts = [Adam(lr=self.critic_lr) for _ in range(n)]
        self.state_ = LearnerState(actors, [Adam(lr=self.actor_lr) for _ in range(n)], critic,
                                   PolicySnapshot(actors), value_nets, value_opts)
        self.game_signature_ = (game.n_agents, game.obs_dim, game.n_actions)
        self.history_ = []
        if self.warm_start_episodes:
            self._warm_start(game)
        return self

    def _warm_start(self, game):
        _, _, loop = self._configs(game.n_agents)
        batch = collect_expert_rollouts(game, self.warm_start_episodes, self.rng_)
        train_critic(self.state_.critic, batch, monte_carlo_targets(batch), loop.critic_epochs,
                     loop.critic_batch_size, self.rng_)

    def partial_fit(self, game):
        """Run a single training iteration (initializing on first use)."""
        if not hasattr(self, "state_"):
            self.initialize(game)
        self._check_game(game)
        tr, est, loop = self._configs(game.n_agents)
        report = train_iteration(game, self.state_, tr, est, loop, self.rng_)
        self.history_.append(report)
        return self

    def fit(self, game, callback=None):
        """Train for ``n_iterations`` from a fresh initialization.

        ``callback(report)`` is called after every iteration.
        """
        self.initialize(game)
        for _ in range(self.n_iterations):
            self.partial_fit(game)
            if callback is not None:
                callback(self.history_[-1])
        return self

    def _check_game(self, game):
        signature = (game.n_agents, game.obs_dim, game.n_actions)
        if signature != self.game_signature_:
            raise DimensionError(f"estimator was initialized for (agents, obs_dim, actions)={self.game_signature_}, "
                                 f"got {signature}")

    @property
    def snapshot_(self):
        check_is_fitted(self, "state_")
        return self.state_.snapshot

    def _check_obs(self, observations):
        check_is_fitted(self, "state_")
        obs = np.asarray(observations, dtype=np.float64)
        n, d, _ = self.game_signature_
        if obs.shape[-2:] != (n, d):
            raise DimensionError(f"observations must end in shape {(n, d)}, got {obs.shape}")
        return obs

    def predict_proba(self, observations):
        """Action distributions ``[..., n_agents, n_actions]`` for joint observations."""
        obs = self._check_obs(observations)
        flat = obs.reshape(-1, *obs.shape[-2:])
        probs = self.snapshot_.joint_probs(flat)
        return probs.reshape(obs.shape[:-1] + (probs.shape[-1],))

    def predict(self, observations):
        """Greedy joint action for each joint observation."""
        return self.predict_proba(observations).argmax(axis=-1)
