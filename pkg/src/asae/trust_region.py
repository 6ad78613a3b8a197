"""Per-agent clipped surrogates and the KL bookkeeping behind them.

Each agent's sub-problem maximizes its advantage-weighted probability ratio
against the frozen previous policy while its own KL to that policy stays
within ``kl_budget``. Bounding every agent's KL by the same budget also bounds
the KL of any group of other agents by ``(n - 1) * kl_budget``, because KL is
additive over independent factors.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .diffmath import forward_mlp, minimum, softmax, trace_mlp
from .envs.matrix import MAX_ENUMERATION, joint_action_weights
from .exceptions import CapacityError, DataError
from .validation import check_distribution

SURROGATES = ("ppo-min", "paper-clip", "unclipped")


@dataclass
class TrustRegionConfig:
    clip_range: float = 0.1
    kl_budget: float = 0.01
    n_agents: int = 2
    actor_epochs: int = 4
    kl_early_stop: bool = True
    surrogate: str = "ppo-min"
    entropy_coef: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.clip_range < 1.0:
            raise ValueError("clip_range must lie in (0, 1)")
        if not self.kl_budget > 0:
            raise ValueError("kl_budget must be positive")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"surrogate must be one of {SURROGATES}")
        if int(self.actor_epochs) < 0:
            raise ValueError("actor_epochs must be nonnegative")

    @property
    def joint_kl_budget(self):
        """Budget on the others' joint policy implied by the per-agent one."""
        return (self.n_agents - 1) * self.kl_budget


def policy_kl(p, q):
    """``KL(p || q)``; ``inf`` if ``p`` puts mass where ``q`` has none."""
    p = check_distribution(p, "p")
    q = check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"distributions have different supports: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(support & (q <= 0)):
        return float("inf")
    return float(np.sum(p[support] * (np.log(p[support]) - np.log(q[support]))))


def batch_kl(p, q):
    """Row-wise ``KL(p || q)`` over the last axis (q assumed positive)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def joint_policy_kl(pairs):
    """KL between two product distributions, by enumerating the joint support."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    size = int(np.prod([len(p) for p, _ in pairs]))
    if size > MAX_ENUMERATION:
        raise CapacityError(f"joint support has {size} outcomes; limit is {MAX_ENUMERATION}")
    joint_p = joint_action_weights([p for p, _ in pairs]).reshape(-1)
    joint_q = joint_action_weights([q for _, q in pairs]).reshape(-1)
    return policy_kl(joint_p, joint_q)


def clipped_surrogate(params, batch, advantages, agent, config, mask=None):
    """Negated surrogate objective of one actor, as a graph node.

    Returns ``(loss, leaves, clip_fraction)``. The ratio is taken against the
    behaviour log-probabilities stored in the batch; only ``params`` (the
    actor of ``agent``) receives gradient.
    """
    old_logp = batch.log_probs[:, agent]
    if np.any(~np.isfinite(old_logp)):
        raise DataError(f"agent {agent}: stored behaviour probability is zero")
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != old_logp.shape:
        raise DataError(f"agent {agent}: {adv.shape[0]} advantages for {old_logp.shape[0]} timesteps")
    mask = np.ones(len(batch), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return None, None, 0.0
    eps = config.clip_range
    logits, leaves = trace_mlp(params, batch.obs[rows, agent])
    logp_all = logits.log_softmax()
    ratio = (logp_all.pick(batch.actions[rows, agent]) - old_logp[rows]).exp()
    a = adv[rows]
    if config.surrogate == "ppo-min":
        per_step = minimum(ratio * a, ratio.clip(1.0 - eps, 1.0 + eps) * a)
    elif config.surrogate == "paper-clip":
        per_step = ratio.clip(1.0 - eps, 1.0 + eps) * a
    else:
        per_step = ratio * a
    loss = -per_step.mean()
    if config.entropy_coef:
        ent = -(logp_all.exp() * logp_all).sum(axis=1).mean()
        loss = loss - ent * config.entropy_coef
    clip_fraction = float(np.mean(np.abs(ratio.data - 1.0) > eps))
    return loss, leaves, clip_fraction


@dataclass
class RestrictionReport:
    kl: np.ndarray
    within_budget: bool
    offending: list
    joint_bound_holds: bool
    max_joint_excess: float


def restriction_check(snapshot, actors, batch, config, n_states=16, mask=None):
    """Measure each agent's mean per-state KL against the snapshot.

    The verdict is true iff every agent is within ``kl_budget``. As a
    diagnostic, on up to ``n_states`` rows the joint KL of every group of
    other agents is compared with the sum of their individual KLs.
    """
    if len(batch) == 0:
        raise ValueError("restriction_check needs a non-empty batch")
    n = snapshot.n_agents
    mask = batch.alive if mask is None else mask
    new_p = np.stack([softmax(forward_mlp(actors[a], batch.obs[:, a])) for a in range(n)], axis=1)
    old_p = np.stack([snapshot.probs(a, batch.obs[:, a]) for a in range(n)], axis=1)
    per_row = batch_kl(new_p, old_p)  # [N, n]
    kl = np.array([per_row[mask[:, a], a].mean() if mask[:, a].any() else 0.0 for a in range(n)])
    offending = [a for a in range(n) if kl[a] > config.kl_budget]
    excess = -np.inf
    for i in range(min(n_states, len(batch))):
        for a in range(n):
            for group in subsets_of_others(n, a):
                joint = joint_policy_kl([(new_p[i, o], old_p[i, o]) for o in group])
                excess = max(excess, joint - per_row[i, list(group)].sum())
    excess = float(excess) if np.isfinite(excess) else 0.0
    return RestrictionReport(kl, not offending, offending, excess <= 1e-10, excess)


def subsets_of_others(n, agent):
    """All non-empty groups of agents other than ``agent``."""
    others = [o for o in range(n) if o != agent]
    for k in range(1, len(others) + 1):
        yield from itertools.combinations(others, k)
