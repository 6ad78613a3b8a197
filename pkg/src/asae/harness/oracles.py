"""Independent numerical checks of the estimators, KL algebra and gradients.

Each check returns a :class:`CheckResult` with the measured quantity, so the
``oracle-check`` command can report values rather than bare verdicts.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..advantage import (
    EstimatorConfig,
    marginal_advantage_exact,
    marginal_advantage_forms,
    marginal_advantage_mc,
)
from ..diffmath import init_mlp, mlp_gradients, trace_mlp
from ..envs.rollout import TrajectoryBatch
from ..trust_region import TrustRegionConfig, clipped_surrogate, joint_policy_kl, policy_kl
from ..validation import check_rng

SUITES = ("advantage", "kl", "gradients", "all")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_dict(self):
        out = asdict(self)
        out["measured"] = float(out["measured"])
        return out


class TabularCritic:
    """Exact joint Q table behind the critic's ``predict`` interface.

    The table does not depend on the state, which lets Monte Carlo
    estimators be compared against enumeration without any fitting error.
    """

    def __init__(self, q_table):
        self.q = np.asarray(q_table, dtype=np.float64)
        self.n_agents = self.q.ndim
        self.n_actions = self.q.shape[0]

    def predict(self, states, others, agents, target=False):
        rows = np.atleast_2d(states).shape[0]
        others = np.asarray(others, dtype=np.int64).reshape(rows, self.n_agents - 1)
        agents = np.broadcast_to(np.asarray(agents, dtype=np.int64), (others.shape[0],))
        out = np.empty((others.shape[0], self.n_actions))
        for i, (row, a) in enumerate(zip(others, agents)):
            index = list(row[:a]) + [slice(None)] + list(row[a:])
            out[i] = self.q[tuple(index)]
        return out


def random_policy(rng, n_actions):
    return rng.dirichlet(np.ones(n_actions))


def random_game(rng, n_choices=(2, 3), action_choices=(2, 3, 4)):
    """Payoff table ~ U[-1, 1] and one random policy per agent."""
    n = int(rng.choice(n_choices))
    u = int(rng.choice(action_choices))
    q = rng.uniform(-1.0, 1.0, size=(u,) * n)
    return q, [random_policy(rng, u) for _ in range(n)]


def random_games(n_games, rng=None):
    rng = check_rng(rng)
    return [random_game(rng) for _ in range(n_games)]


def _games(games, rng):
    # Either a count of fresh random games or an explicit list of (q, policies).
    return random_games(games, rng) if isinstance(games, int) else list(games)


def dual_form_deviation(games=100, rng=None):
    """Largest gap between the two closed forms of the marginal advantage."""
    worst = 0.0
    for q, pols in _games(games, rng):
        for a in range(q.ndim):
            for u in range(q.shape[a]):
                first, second = marginal_advantage_forms(q, pols, a, u)
                worst = max(worst, abs(first - second))
    return worst


def expected_advantage_deviation(games=100, rng=None):
    """Largest ``|E_{u ~ pi^a} A^a(u)|`` over agents of random games."""
    worst = 0.0
    for q, pols in _games(games, rng):
        for a in range(q.ndim):
            adv = np.array([marginal_advantage_exact(q, pols, a, u) for u in range(q.shape[a])])
            worst = max(worst, abs(float(pols[a] @ adv)))
    return worst


def mc_resample_mean(q, pols, agent, n_resamples, m, rng):
    """Monte Carlo advantages at ``u^a ~ pi^a``, ``n_resamples`` times; returns the draws."""
    critic = TabularCritic(q)
    probs = np.stack(pols)
    config = EstimatorConfig(m=m)
    actions = rng.choice(len(pols[agent]), size=n_resamples, p=pols[agent])
    return np.array([marginal_advantage_mc(critic, np.zeros(1), probs, agent, u, config, rng)[0] for u in actions])


def pooled_mc_zero_mean(games=100, total_resamples=10_000, m=50, rng=None):
    """z-score of the pooled Monte Carlo advantage mean against 0.

    The resamples are spread evenly over the games; each draws ``u^a`` from
    the policy and estimates the marginal advantage with ``m`` samples.
    """
    rng = check_rng(rng)
    games = _games(games, rng)
    per_game = total_resamples // len(games)
    draws = []
    for q, pols in games:
        agent = int(rng.integers(q.ndim))
        draws.append(mc_resample_mean(q, pols, agent, per_game, m, rng))
    draws = np.concatenate(draws)
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    return float(draws.mean() / se), float(draws.mean()), float(se)


def mc_error_slope(ms=(10, 100, 1000), n_trials=400, rng=None):
    """Log-log slope of mean absolute Monte Carlo error against ``m``.

    Each trial draws a random game, agent and action and compares one
    ``m``-sample estimate with the enumerated marginal advantage.
    """
    rng = check_rng(rng)
    cases = []
    for _ in range(n_trials):
        q, pols = random_game(rng)
        a = int(rng.integers(q.ndim))
        u = int(rng.integers(q.shape[a]))
        cases.append((q, pols, a, u, marginal_advantage_exact(q, pols, a, u)))
    errors = []
    for m in ms:
        config = EstimatorConfig(m=m)
        err = [abs(marginal_advantage_mc(TabularCritic(q), np.zeros(1), np.stack(p), a, u, config, rng)[0] - exact)
               for q, p, a, u, exact in cases]
        errors.append(float(np.mean(err)))
    slope = float(np.polyfit(np.log(ms), np.log(errors), 1)[0])
    return slope, errors


def kl_additivity_deviation(n_pairs=1000, rng=None, max_agents=4, max_actions=5):
    """Largest ``|KL(joint) - sum of per-agent KLs|`` over random factored policy pairs."""
    rng = check_rng(rng)
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(1, max_agents + 1))
        u = int(rng.integers(2, max_actions + 1))
        pairs = [(random_policy(rng, u), random_policy(rng, u)) for _ in range(n)]
        total = sum(policy_kl(p, q) for p, q in pairs)
        worst = max(worst, abs(joint_policy_kl(pairs) - total))
    return worst


def identical_policy_kl(rng=None):
    rng = check_rng(rng)
    pairs = [(p, p.copy()) for p in (random_policy(rng, 4) for _ in range(3))]
    return joint_policy_kl(pairs)


def numerical_gradient(loss_fn, params, h=1e-6):
    """Central finite differences of ``loss_fn(params)`` for every parameter."""
    grads = params.zeros_like()
    for arr, g in zip(params.arrays(), grads.arrays()):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss_fn(params)
            arr[idx] = old - h
            down = loss_fn(params)
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
    return grads


def relative_error(analytic, numeric):
    """Worst per-array ``||a - b|| / max(||a||, ||b||)`` (0 when both vanish)."""
    worst = 0.0
    for a, b in zip(analytic.arrays(), numeric.arrays()):
        scale = max(np.linalg.norm(a), np.linalg.norm(b))
        if scale > 1e-12:
            worst = max(worst, float(np.linalg.norm(a - b) / scale))
    return worst


def _random_net(rng, sizes, activation):
    # Nonzero biases keep ReLU pre-activations off the kink, where finite
    # differences are not a valid reference.
    params = init_mlp(sizes, activation, rng)
    for b in params.biases:
        b[...] = rng.uniform(-0.5, 0.5, size=b.shape)
    return params


def _random_batch(rng, n_rows, n_agents, n_actions, obs_dim, state_dim=3):
    probs = rng.dirichlet(np.ones(n_actions), size=(n_rows, n_agents))
    actions = np.array([[rng.choice(n_actions, p=probs[i, a]) for a in range(n_agents)] for i in range(n_rows)])
    log_probs = np.log(np.take_along_axis(probs, actions[..., None], axis=-1)[..., 0])
    dones = np.zeros(n_rows, dtype=bool)
    dones[-1] = True
    return TrajectoryBatch(
        states=rng.normal(size=(n_rows, state_dim)), obs=rng.normal(size=(n_rows, n_agents, obs_dim)),
        actions=actions, log_probs=log_probs, probs=probs, rewards=rng.normal(size=n_rows), dones=dones,
        alive=np.ones((n_rows, n_agents), dtype=bool), episode=np.zeros(n_rows, dtype=np.int64),
        t=np.arange(n_rows), gamma=0.99,
    )


def actor_loss_case(rng):
    """A random actor with a random clipped-surrogate loss; returns (params, loss_fn)."""
    n_actions = int(rng.integers(2, 5))
    obs_dim = int(rng.integers(2, 6))
    hidden = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    activation = str(rng.choice(["tanh", "relu"]))
    params = _random_net(rng, [obs_dim, *hidden, n_actions], activation)
    batch = _random_batch(rng, int(rng.integers(3, 9)), 2, n_actions, obs_dim)
    adv = rng.normal(size=len(batch))
    config = TrustRegionConfig(
        clip_range=float(rng.uniform(0.05, 0.3)), surrogate=str(rng.choice(["ppo-min", "paper-clip", "unclipped"])),
        entropy_coef=float(rng.choice([0.0, 0.01])),
    )
    agent = int(rng.integers(2))

    def loss_fn(p):
        loss, leaves, _ = clipped_surrogate(p, batch, adv, agent, config)
        return loss, leaves

    return params, loss_fn


def critic_loss_case(rng):
    """A random critic network with a squared-error loss on picked outputs."""
    n_in = int(rng.integers(2, 8))
    n_out = int(rng.integers(2, 5))
    hidden = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    activation = str(rng.choice(["tanh", "relu"]))
    params = _random_net(rng, [n_in, *hidden, n_out], activation)
    rows = int(rng.integers(2, 9))
    x = rng.normal(size=(rows, n_in))
    picks = rng.integers(n_out, size=rows)
    y = rng.normal(size=rows)

    def loss_fn(p):
        out, leaves = trace_mlp(p, x)
        return (out.pick(picks) - y).square().mean(), leaves

    return params, loss_fn


def gradient_errors(n_cases=100, rng=None):
    """Relative errors of analytic against finite-difference gradients, alternating actor and critic losses."""
    rng = check_rng(rng)
    errors = []
    for i in range(n_cases):
        params, loss_fn = (actor_loss_case if i % 2 == 0 else critic_loss_case)(rng)
        loss, leaves = loss_fn(params)
        analytic = mlp_gradients(params, loss, leaves)
        numeric = numerical_gradient(lambda p: float(loss_fn(p)[0].data), params)
        errors.append(relative_error(analytic, numeric))
    return np.array(errors)


def run_suite(suite, rng=0):
    """Run one suite (or ``all``) and return its :class:`CheckResult` list."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {list(SUITES)}")
    rng = check_rng(rng)
    results = []
    if suite in ("advantage", "all"):
        games = random_games(100, rng)
        dev = dual_form_deviation(games)
        results.append(CheckResult("advantage", "dual_form_equality", dev <= 1e-10, dev, 1e-10,
                                   "100 random games, all agents and actions"))
        dev = expected_advantage_deviation(games)
        results.append(CheckResult("advantage", "exact_advantage_zero_mean", dev <= 1e-12, dev, 1e-12,
                                   "same 100 games"))
        z, mean, se = pooled_mc_zero_mean(games, 10_000, 50, rng)
        results.append(CheckResult("advantage", "mc_advantage_zero_mean", abs(z) <= 3.0, abs(z), 3.0,
                                   f"|mean|/stderr over 10^4 resamples; mean={mean:.3e}, stderr={se:.3e}"))
        slope, errors = mc_error_slope(rng=rng)
        results.append(CheckResult("advantage", "mc_error_slope", -0.65 <= slope <= -0.35, slope, 0.15,
                                   "log-log slope at m=10,100,1000; errors=" + ",".join(f"{e:.4g}" for e in errors)))
    if suite in ("kl", "all"):
        kl = identical_policy_kl(rng)
        results.append(CheckResult("kl", "identical_policies", abs(kl) <= 1e-12, kl, 1e-12))
        dev = kl_additivity_deviation(1000, rng)
        results.append(CheckResult("kl", "joint_kl_equals_sum", dev <= 1e-10, dev, 1e-10,
                                   "1000 random factored policy pairs"))
    if suite in ("gradients", "all"):
        errors = gradient_errors(100, rng)
        worst = float(errors.max())
        results.append(CheckResult("gradients", "finite_difference_agreement", worst <= 1e-4, worst, 1e-4,
                                   "100 random actor and critic losses"))
    return results
