import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asae.advantage import (
    AdvantageTable,
    EstimatorConfig,
    counterfactual_advantage,
    draw_joint_samples,
    marginal_advantage_exact,
    marginal_advantage_forms,
    marginal_advantage_mc,
    marginal_q_exact,
    mc_advantage_table,
    realized_counterfactual_table,
    reorganize_samples,
    state_value_table,
    td_residual_advantage,
)
from asae.envs import MatrixGame, TrajectoryBatch, coordination_game, collect_rollouts
from asae.exceptions import CapacityError, DataError, DimensionError
from asae.harness.oracles import TabularCritic, random_game

COORD = np.array([[1.0, 0.0], [0.0, 0.5]])
UNIFORM2 = [[0.5, 0.5], [0.5, 0.5]]
STATE = np.array([1.0, 0.0])


class Fixed:
    def __init__(self, probs):
        self.table = np.asarray(probs, float)
        self.n_actions = self.table.shape[1]
        self.digest = "fixed"

    def probs(self, agent, obs):
        return np.tile(self.table[agent], (len(obs), 1))


class ConstantCritic:
    def __init__(self, c, n_agents=2, n_actions=2):
        self.c, self.n_agents, self.n_actions = c, n_agents, n_actions

    def predict(self, states, others, agents, target=False):
        rows = np.atleast_2d(states).shape[0]
        return np.full((rows, self.n_actions), self.c)


# counterfactual advantage

def test_counterfactual_constant_q_is_zero():
    for u in range(3):
        assert counterfactual_advantage([2.0, 2.0, 2.0], [0.2, 0.3, 0.5], u) == 0.0


def test_counterfactual_example():
    assert counterfactual_advantage([1.0, 0.0], [0.5, 0.5], 0) == 0.5
    assert counterfactual_advantage([1.0, 0.0], [0.5, 0.5], 1) == -0.5


def test_counterfactual_rejects_bad_inputs():
    with pytest.raises(IndexError):
        counterfactual_advantage([1.0, 0.0], [0.5, 0.5], 2)
    with pytest.raises(DimensionError):
        counterfactual_advantage([1.0, 0.0], [0.2, 0.3, 0.5], 0)
    with pytest.raises(ValueError):
        counterfactual_advantage([1.0, 0.0], [0.6, 0.6], 0)


@given(st.integers(1, 6).flatmap(lambda k: st.tuples(
    st.lists(st.floats(-100, 100), min_size=k, max_size=k),
    st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k))))
def test_counterfactual_expectation_is_zero(data):
    q, w = data
    pi = np.array(w) / np.sum(w)
    pi = pi / pi.sum()
    total = sum(pi[k] * counterfactual_advantage(q, pi, k) for k in range(len(q)))
    assert abs(total) <= 1e-12 * max(1.0, np.max(np.abs(q)))


# marginal Q and advantage

def test_marginal_q_coordination():
    assert marginal_q_exact(COORD, [None, [0.5, 0.5]], 0, 0) == 0.5
    assert marginal_q_exact(COORD, [None, [0.5, 0.5]], 0, 1) == 0.25


def test_marginal_q_degenerate_others():
    q = np.random.default_rng(0).normal(size=(3, 3, 3))
    for u in range(3):
        assert marginal_q_exact(q, [[0, 1, 0], None, [0, 0, 1]], 1, u) == q[1, u, 2]


def test_single_agent_marginal_q_is_q():
    q = np.array([0.3, -1.0, 2.0])
    for u in range(3):
        assert marginal_q_exact(q, [None], 0, u) == q[u]


def test_marginal_advantage_coordination():
    assert marginal_advantage_exact(COORD, UNIFORM2, 0, 0) == pytest.approx(0.125, abs=1e-15)
    assert marginal_advantage_exact(COORD, UNIFORM2, 0, 1) == pytest.approx(-0.125, abs=1e-15)


def test_single_agent_marginal_advantage_is_standard_advantage():
    q, pi = np.array([0.3, -1.0, 2.0]), np.array([0.2, 0.5, 0.3])
    for u in range(3):
        assert marginal_advantage_exact(q, [pi], 0, u) == pytest.approx(q[u] - pi @ q, abs=1e-15)


def test_dual_forms_agree_on_random_games():
    rng = np.random.default_rng(0)
    for _ in range(100):
        q, pols = random_game(rng)
        for a in range(q.ndim):
            for u in range(q.shape[0]):
                first, second = marginal_advantage_forms(q, pols, a, u)
                assert abs(first - second) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_marginal_advantage_has_zero_policy_mean(seed):
    rng = np.random.default_rng(seed)
    q, pols = random_game(rng)
    for a in range(q.ndim):
        adv = [marginal_advantage_exact(q, pols, a, u) for u in range(q.shape[0])]
        assert abs(np.dot(pols[a], adv)) <= 1e-12


def test_bystander_gets_zero_credit():
    row = np.array([0.2, 1.0, 0.5])
    q = np.repeat(row[:, None], 3, axis=1)
    pols = [[0.2, 0.5, 0.3], [0.1, 0.6, 0.3]]
    bystander = [marginal_advantage_exact(q, pols, 1, u) for u in range(3)]
    actor = [marginal_advantage_exact(q, pols, 0, u) for u in range(3)]
    assert np.max(np.abs(bystander)) <= 1e-12
    assert np.max(np.abs(actor)) > 0.1


def test_capacity_limit():
    with pytest.raises(CapacityError):
        marginal_q_exact(np.zeros((10,) * 6), [[0.1] * 10] * 6, 0, 0)


# reorganization

def test_reorganize_single_sample():
    (s,) = reorganize_samples([[1, 0]], 0)
    assert s.action == 1 and s.others == (0,) and s.draw == 0


def test_reorganize_example():
    out = reorganize_samples([(0, 1), (1, 0), (0, 0)], 0)
    assert [s.others for s in out] == [(1,), (0,), (0,)]
    assert all(s.action == 0 for s in out)


def test_reorganize_three_agents_drops_own_column():
    rng = np.random.default_rng(0)
    samples = rng.integers(4, size=(7, 3))
    out = reorganize_samples(samples, 2)
    assert [s.others for s in out] == [tuple(r[:2]) for r in samples]
    assert all(len(s.others) == 2 and s.action == samples[0, 2] for s in out)


def test_reorganize_empty_rejected():
    with pytest.raises(ValueError):
        reorganize_samples(np.zeros((0, 2), dtype=int), 0)


def test_draw_keeps_realized_first():
    out = draw_joint_samples(np.array(UNIFORM2), 5, np.random.default_rng(0), realized=[1, 1])
    assert out.shape == (5, 2) and tuple(out[0]) == (1, 1)


# Monte Carlo estimator

def test_mc_converges_to_exact():
    est, se = marginal_advantage_mc(TabularCritic(COORD), STATE, np.array(UNIFORM2), 0, 0,
                                    EstimatorConfig(m=10_000), np.random.default_rng(0))
    assert se > 0
    assert abs(est - 0.125) <= 3 * se


def test_mc_exact_when_others_deterministic():
    probs = np.array([[0.3, 0.7], [0.0, 1.0]])
    for m in (1, 5, 50):
        est, se = marginal_advantage_mc(TabularCritic(COORD), STATE, probs, 0, 0, EstimatorConfig(m=m), 0)
        assert est == pytest.approx(marginal_advantage_exact(COORD, probs, 0, 0), abs=1e-15)
        assert se == pytest.approx(0.0, abs=1e-15)


def test_mc_constant_critic_is_zero():
    for m in (1, 7):
        for u in range(2):
            est, _ = marginal_advantage_mc(ConstantCritic(3.0), STATE, np.array(UNIFORM2), 1, u,
                                           EstimatorConfig(m=m), 0)
            assert est == 0.0


def test_mc_single_agent_reduces_to_standard_advantage():
    q, pi = np.array([0.3, -1.0, 2.0]), np.array([[0.2, 0.5, 0.3]])
    est, se = marginal_advantage_mc(TabularCritic(q), STATE, pi, 0, 2, EstimatorConfig(m=10), 0)
    assert est == pytest.approx(q[2] - pi[0] @ q, abs=1e-15)
    assert se == pytest.approx(0.0, abs=1e-15)


def test_estimator_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(m=0)
    with pytest.raises(ValueError):
        EstimatorConfig(variant="gae")


def test_table_matches_per_row_estimator():
    game = MatrixGame(np.random.default_rng(0).normal(size=(3, 3, 3)))
    probs = np.array([[0.2, 0.5, 0.3], [0.6, 0.2, 0.2], [1 / 3] * 3])
    batch = collect_rollouts(game, Fixed(probs), 40, np.random.default_rng(1))
    critic = TabularCritic(game.spec.payoff)
    table = mc_advantage_table(critic, batch, m=2000, rng=np.random.default_rng(2))
    assert table.variant == "mc-q" and table.m == 2000
    exact = np.array([[marginal_advantage_exact(game.spec.payoff, probs, a, int(batch.actions[i, a]))
                       for a in range(3)] for i in range(len(batch))])
    # Errors in units of the reported standard error should look standard normal.
    z = (table.values - exact) / table.stderr
    assert np.all(np.abs(z.mean(axis=0)) <= 3 / np.sqrt(len(batch)))
    assert np.all(np.abs(z.std(axis=0) - 1.0) <= 0.35)
    assert np.max(np.abs(z)) <= 5.0


def test_table_bystander_exactly_zero():
    from asae.envs import dummy_agent_game
    game = dummy_agent_game()
    batch = collect_rollouts(game, Fixed(np.full((2, 3), 1 / 3)), 30, 0)
    table = mc_advantage_table(TabularCritic(game.spec.payoff), batch, m=20, rng=0)
    assert np.all(table.values[:, 1] == 0.0)
    assert np.any(table.values[:, 0] != 0.0)


def test_table_includes_realized_action():
    # With m=1 only the realized joint action is used.
    batch = collect_rollouts(coordination_game(), Fixed(UNIFORM2), 30, 0)
    critic = TabularCritic(COORD)
    one = mc_advantage_table(critic, batch, m=1, rng=0)
    realized = realized_counterfactual_table(critic, batch)
    assert np.array_equal(one.values, realized.values)
    assert np.all(one.stderr == 0.0)


def test_state_value_table_coordination():
    batch = collect_rollouts(coordination_game(), Fixed(UNIFORM2), 20, 0)
    v = state_value_table(TabularCritic(COORD), batch, m=20_000, rng=0)
    assert np.allclose(v, 0.375, atol=0.01)


def test_advantage_table_rejects_non_finite():
    with pytest.raises(DataError):
        AdvantageTable(np.array([[np.nan]]), np.zeros((1, 1)), 1, "exact")


# TD residuals

def multi_step_batch(steps=4, episodes=6):
    game = MatrixGame(COORD, steps=steps, gamma=0.9)
    return collect_rollouts(game, Fixed(UNIFORM2), episodes, np.random.default_rng(0))


def test_td_with_zero_values():
    batch = multi_step_batch()
    one = td_residual_advantage(batch, np.zeros(len(batch)), "1step")
    full = td_residual_advantage(batch, np.zeros(len(batch)), "discounted-sum")
    assert np.array_equal(one.values, np.repeat(batch.rewards[:, None], 2, axis=1))
    assert np.allclose(full.values, np.repeat(batch.returns[:, None], 2, axis=1), atol=1e-14)


def test_td_discounted_sum_telescopes():
    batch = multi_step_batch()
    v = np.random.default_rng(3).normal(size=(len(batch), 2))
    full = td_residual_advantage(batch, v, "discounted-sum")
    assert np.allclose(full.values, batch.returns[:, None] - v, atol=1e-12)


def test_td_gamma_zero_collapses():
    batch = multi_step_batch()
    v = np.random.default_rng(4).normal(size=len(batch))
    one = td_residual_advantage(batch, v, "1step", gamma=0.0)
    full = td_residual_advantage(batch, v, "discounted-sum", gamma=0.0)
    assert np.array_equal(one.values, full.values)


def test_td_exact_values_have_zero_mean_residual():
    # Two-step chain under uniform play: V(s_0) = mean payoff + gamma * mean
    # payoff, V(s_1) = mean payoff. The residual averages to zero.
    game = MatrixGame(COORD, steps=2, gamma=0.9)
    batch = collect_rollouts(game, Fixed(UNIFORM2), 20_000, np.random.default_rng(0))
    mean = COORD.mean()
    v = np.where(batch.t == 0, mean + 0.9 * mean, mean)
    delta = td_residual_advantage(batch, v, "1step").values[:, 0]
    assert abs(delta.mean()) <= 3 * delta.std(ddof=1) / np.sqrt(len(delta))


def test_td_needs_terminal_last_row():
    batch = multi_step_batch()
    cut = batch.subset(np.arange(len(batch) - 1))
    with pytest.raises(DataError):
        td_residual_advantage(cut, np.zeros(len(cut)))


def test_td_unknown_variant():
    batch = multi_step_batch()
    with pytest.raises(ValueError):
        td_residual_advantage(batch, np.zeros(len(batch)), "gae")


def test_td_callable_values():
    batch = multi_step_batch()
    out = td_residual_advantage(batch, lambda s: np.zeros(len(s)))
    assert out.variant == "td-residual-1step" and out.m == 1


@pytest.mark.parametrize("n,u", [(2, 2), (2, 3), (3, 2)])
def test_exact_identity_over_all_actions(n, u):
    rng = np.random.default_rng(n * 10 + u)
    q = rng.normal(size=(u,) * n)
    pols = [rng.dirichlet(np.ones(u)) for _ in range(n)]
    for a in range(n):
        # Marginal advantage by brute force over every joint action.
        for ua in range(u):
            total = 0.0
            for others in itertools.product(range(u), repeat=n - 1):
                w = np.prod([pols[o][x] for o, x in zip([i for i in range(n) if i != a], others)])
                joint = list(others[:a]) + [ua] + list(others[a:])
                base = sum(pols[a][k] * q[tuple(list(others[:a]) + [k] + list(others[a:]))] for k in range(u))
                total += w * (q[tuple(joint)] - base)
            assert marginal_advantage_exact(q, pols, a, ua) == pytest.approx(total, abs=1e-12)
