"""Counterfactual and marginal advantage estimators.

The counterfactual advantage of agent ``a`` fixes the other agents' actions
``u^{-a}`` and compares ``Q(s, u)`` against the ``pi^a``-weighted average over
``a``'s own alternatives. The marginal advantage takes the expectation of
that quantity over ``u^{-a} ~ pi^{-a}``, either exactly by enumeration or by
Monte Carlo over ``m`` reorganized joint samples queried through the critic.
"""

from dataclasses import dataclass

import numpy as np

from .critic import others_of
from .envs.matrix import MAX_ENUMERATION, joint_action_weights
from .exceptions import CapacityError, DataError, DimensionError
from .validation import check_action, check_distribution, check_rng, check_vector

VARIANTS = ("exact", "mc-q", "td-residual-1step", "td-residual-discounted-sum")
DUAL_FORM_ATOL = 1e-10


@dataclass
class EstimatorConfig:
    m: int = 50
    variant: str = "mc-q"

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("m must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class CounterfactualSample:
    """One counterfactual scene for ``agent``: the others' actions from draw ``draw``."""

    agent: int
    action: int
    others: tuple
    draw: int


@dataclass
class AdvantageTable:
    """Per-(row, agent) advantage estimates with their Monte Carlo standard errors."""

    values: np.ndarray  # [N, n]
    stderr: np.ndarray  # [N, n]
    m: int
    variant: str
    snapshot_digest: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise DataError("advantage estimates must be finite")

    def agent(self, a):
        return self.values[:, a]


def counterfactual_advantage(q_vec, policy, action):
    """``q[u] - sum_k pi(k) q[k]`` for a single counterfactual scene."""
    q = check_vector(q_vec, "q vector")
    pi = check_distribution(policy, "policy", length=q.size)
    u = check_action(action, q.size)
    return float(q[u] - pi @ q)


def counterfactual_advantages(q, policy, actions):
    """Row-wise :func:`counterfactual_advantage` for ``q, policy: [B, U]``."""
    q = np.asarray(q, dtype=np.float64)
    baseline = np.einsum("bk,bk->b", q, policy)
    return q[np.arange(q.shape[0]), np.asarray(actions, dtype=np.int64)] - baseline


def _check_table(q_table, policies):
    q = np.asarray(q_table, dtype=np.float64)
    if q.size >= MAX_ENUMERATION:
        raise CapacityError(f"joint table has {q.size} entries; limit is {MAX_ENUMERATION}")
    if len(policies) != q.ndim:
        raise DimensionError(f"need one policy per agent ({q.ndim}), got {len(policies)}")
    return q


def marginal_q_exact(q_table, policies, agent, action):
    """``E_{u^{-a} ~ pi^{-a}} Q(s, (u^a, u^{-a}))`` by enumeration.

    ``policies`` has one entry per agent; the entry for ``agent`` is not used
    and may be None.
    """
    q = _check_table(q_table, policies)
    u = check_action(action, q.shape[agent])
    others = [check_distribution(p, f"policy of agent {o}", length=q.shape[o])
              for o, p in enumerate(policies) if o != agent]
    slice_a = np.take(q, u, axis=agent)
    return float((joint_action_weights(others) * slice_a).sum())


def marginal_advantage_forms(q_table, policies, agent, action):
    """Both closed forms of the marginal advantage.

    Returns ``(marginal Q minus its pi^a-average, pi^{-a}-expectation of the
    counterfactual advantage)``; they agree up to rounding.
    """
    q = _check_table(q_table, policies)
    n_a = q.shape[agent]
    pi_a = check_distribution(policies[agent], f"policy of agent {agent}", length=n_a)
    u = check_action(action, n_a)
    marg = np.array([marginal_q_exact(q, policies, agent, k) for k in range(n_a)])
    first = float(marg[u] - pi_a @ marg)

    q_a_last = np.moveaxis(q, agent, -1)  # [others..., U_a]
    others = [np.asarray(p, dtype=np.float64) for o, p in enumerate(policies) if o != agent]
    weights = joint_action_weights(others)
    cf = q_a_last[..., u] - q_a_last @ pi_a
    second = float((weights * cf).sum())
    return first, second


def marginal_advantage_exact(q_table, policies, agent, action):
    """Exact marginal advantage; both closed forms must agree to 1e-10."""
    first, second = marginal_advantage_forms(q_table, policies, agent, action)
    if abs(first - second) > DUAL_FORM_ATOL:
        raise ArithmeticError(f"marginal advantage forms disagree: {first!r} vs {second!r}")
    return first


def draw_joint_samples(probs, m, rng, realized=None):
    """Draw ``m`` joint actions from independent per-agent distributions ``[n, U]``.

    With ``realized`` given it becomes sample 0 and ``m - 1`` more are drawn.
    """
    probs = check_distribution(probs, "joint policy")
    rng = check_rng(rng)
    n_fresh = m if realized is None else m - 1
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random((n_fresh, probs.shape[0])) * cdf[:, -1]
    fresh = np.minimum((cdf[None] <= u[..., None]).sum(axis=-1), probs.shape[1] - 1)
    if realized is None:
        return fresh
    return np.concatenate([np.asarray(realized, dtype=np.int64)[None], fresh])


def reorganize_samples(joint_samples, agent):
    """Pair agent ``a``'s action from the first sample with every sample's others.

    Sample ``j`` gives ``(u^a from Sa_1, u^{-a} from Sa_j)`` for ``j = 1..m``,
    the first sample included.
    """
    samples = np.asarray(joint_samples, dtype=np.int64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need a non-empty [m, n] array of joint-action samples")
    own = int(samples[0, agent])
    return [CounterfactualSample(agent, own, tuple(int(x) for x in others_of(row, agent)), j)
            for j, row in enumerate(samples)]


def marginal_advantage_mc(critic, state, policies, agent, action, config=None, rng=None, realized=None):
    """Monte Carlo marginal advantage of one (state, agent, action).

    ``policies`` is the ``[n, U]`` stack of the frozen behaviour distributions
    at ``state``. Returns ``(estimate, standard error)``.
    """
    config = config or EstimatorConfig()
    probs = check_distribution(policies, "joint policy")
    u = check_action(action, probs.shape[1])
    samples = draw_joint_samples(probs, config.m, rng, realized)
    others = others_of(samples, agent)
    states = np.repeat(np.asarray(state, dtype=np.float64)[None], config.m, axis=0)
    q = critic.predict(states, others, agent)
    per_sample = counterfactual_advantages(q, np.broadcast_to(probs[agent], q.shape), np.full(config.m, u))
    return float(per_sample.mean()), _stderr(per_sample[None], config.m)[0]


def _stderr(per_sample, m):
    # per_sample: [..., m]
    if m < 2:
        return np.zeros(per_sample.shape[:-1])
    return per_sample.std(axis=-1, ddof=1) / np.sqrt(m)


def _predict_pooled(critic, states, others, agent):
    """Critic outputs for ``others: [rows, m, n-1]`` at each row's state.

    Identical (row, u^{-a}) pairs are evaluated once; with peaked policies
    most of the ``m`` samples repeat.
    """
    rows, m, k = others.shape
    n_actions = critic.n_actions
    key = np.arange(rows)[:, None] * n_actions ** k + (others * n_actions ** np.arange(k)).sum(axis=-1)
    _, first, inverse = np.unique(key.reshape(-1), return_index=True, return_inverse=True)
    flat_others = others.reshape(rows * m, k)[first]
    q = critic.predict(states[first // m], flat_others, agent)
    return q[inverse].reshape(rows, m, n_actions)


def mc_advantage_table(critic, batch, m=50, rng=None, include_realized=True, chunk_rows=2048):
    """Marginal advantages for every (row, agent) of a batch.

    At each row one pool of ``m`` joint actions is drawn from the stored
    behaviour distributions, with the realized joint action as the first
    sample, and reorganized per agent.
    """
    rng = check_rng(rng)
    n_rows, n, n_actions = batch.probs.shape
    cdf = np.cumsum(batch.probs, axis=-1)
    n_fresh = m - 1 if include_realized else m
    draws = rng.random((n_rows, n_fresh, n)) * cdf[:, None, :, -1]
    fresh = np.minimum((cdf[:, None] <= draws[..., None]).sum(axis=-1), n_actions - 1)
    pool = np.concatenate([batch.actions[:, None], fresh], axis=1) if include_realized else fresh
    values = np.zeros((n_rows, n))
    stderr = np.zeros((n_rows, n))
    for a in range(n):
        for lo in range(0, n_rows, chunk_rows):
            hi = min(lo + chunk_rows, n_rows)
            rows = hi - lo
            q = _predict_pooled(critic, batch.states[lo:hi], others_of(pool[lo:hi], a), a)
            pi = batch.probs[lo:hi, a]
            own = batch.actions[lo:hi, a]
            per_sample = q[np.arange(rows), :, own] - np.einsum("rmk,rk->rm", q, pi)
            values[lo:hi, a] = per_sample.mean(axis=1)
            stderr[lo:hi, a] = _stderr(per_sample, m)
    return AdvantageTable(values, stderr, m, "mc-q", batch.snapshot_digest)


def state_value_table(critic, batch, m=50, rng=None):
    """Per-(row, agent) state values averaged over ``m`` reorganized samples."""
    rng = check_rng(rng)
    n_rows, n, n_actions = batch.probs.shape
    cdf = np.cumsum(batch.probs, axis=-1)
    draws = rng.random((n_rows, m - 1, n)) * cdf[:, None, :, -1]
    fresh = np.minimum((cdf[:, None] <= draws[..., None]).sum(axis=-1), n_actions - 1)
    pool = np.concatenate([batch.actions[:, None], fresh], axis=1)
    values = np.zeros((n_rows, n))
    for a in range(n):
        q = _predict_pooled(critic, batch.states, others_of(pool, a), a)
        values[:, a] = np.einsum("rmk,rk->r", q, batch.probs[:, a]) / m
    return values


def td_residual_advantage(batch, values, variant="td-residual-1step", gamma=None):
    """TD-residual advantages from state values.

    ``values`` is ``[N]`` (shared), ``[N, n]`` (per agent) or a callable on
    the batch states. Terminal rows bootstrap from zero. The discounted-sum
    variant accumulates ``gamma^l * delta_{t+l}`` to the end of the episode.
    """
    gamma = batch.gamma if gamma is None else gamma
    n = batch.n_agents
    v = values(batch.states) if callable(values) else values
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = np.repeat(v[:, None], n, axis=1)
    if v.shape != (len(batch), n):
        raise DimensionError(f"values must have shape {(len(batch),)} or {(len(batch), n)}, got {v.shape}")
    nxt = batch.next_index()
    v_next = np.where((nxt >= 0)[:, None], v[np.maximum(nxt, 0)], 0.0)
    delta = batch.rewards[:, None] + gamma * v_next - v
    if variant in ("1step", "td-residual-1step"):
        out, tag = delta, "td-residual-1step"
    elif variant in ("discounted-sum", "td-residual-discounted-sum"):
        out = np.zeros_like(delta)
        running = np.zeros(n)
        for i in range(len(batch) - 1, -1, -1):
            running = delta[i] + (gamma * running if nxt[i] >= 0 else 0.0)
            out[i] = running
        tag = "td-residual-discounted-sum"
    else:
        raise ValueError(f"unknown TD-residual variant {variant!r}")
    return AdvantageTable(out, np.zeros_like(out), 1, tag, batch.snapshot_digest)


def realized_counterfactual_table(critic, batch):
    """Counterfactual advantage with the realized ``u^{-a}`` only (no marginalization)."""
    n = batch.n_agents
    values = np.zeros((len(batch), n))
    for a in range(n):
        q = critic.predict(batch.states, others_of(batch.actions, a), a)
        values[:, a] = counterfactual_advantages(q, batch.probs[:, a], batch.actions[:, a])
    return AdvantageTable(values, np.zeros_like(values), 1, "realized-counterfactual", batch.snapshot_digest)
