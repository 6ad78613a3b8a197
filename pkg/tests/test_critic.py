import numpy as np
import pytest

from asae.critic import (
    JointQCritic,
    joint_q,
    monte_carlo_targets,
    q_values,
    state_value,
    td_lambda_targets,
    train_critic,
)
from asae.diffmath import MlpParams, init_mlp
from asae.envs import coordination_game, collect_rollouts, exact_joint_q
from asae.exceptions import DimensionError, TrainingError
from asae.harness.oracles import TabularCritic

COORD = np.array([[1.0, 0.0], [0.0, 0.5]])
STATE = np.array([1.0, 0.0])


class Uniform:
    n_actions = 2
    digest = "u"

    def probs(self, agent, obs):
        return np.full((len(obs), 2), 0.5)


def constant_critic(c, state_dim=2, n_agents=2, n_actions=2):
    input_dim = state_dim + (n_agents - 1) * n_actions + n_agents
    params = MlpParams([np.zeros((input_dim, n_actions))], [np.full(n_actions, c)])
    return JointQCritic(state_dim, n_agents, n_actions, params=params)


def test_zero_critic_outputs_zero():
    critic = constant_critic(0.0)
    assert np.array_equal(q_values(critic, STATE, [1], 0), [0.0, 0.0])


@pytest.mark.parametrize("state, others, agent, block", [
    (np.zeros(3), [0], 0, "state block"),
    (STATE, [0, 1], 0, "others-action block"),
    (STATE, [2], 0, "others-action block"),
    (STATE, [0], 5, "agent-id block"),
])
def test_layout_errors_name_block(state, others, agent, block):
    critic = JointQCritic(2, 2, 2, rng=0)
    with pytest.raises(DimensionError, match=block):
        q_values(critic, state, others, agent)


def test_counterfactual_sweep_matches_joint_queries():
    rng = np.random.default_rng(0)
    critic = JointQCritic(5, 3, 4, rng=rng)
    for _ in range(20):
        s = rng.normal(size=5)
        joint = rng.integers(4, size=3)
        a = int(rng.integers(3))
        sweep = q_values(critic, s, np.delete(joint, a), a)
        for k in range(4):
            alt = joint.copy()
            alt[a] = k
            assert joint_q(critic, s, alt, a) == sweep[k]


def test_agent_id_changes_output():
    critic = JointQCritic(2, 2, 2, rng=0)
    assert not np.array_equal(q_values(critic, STATE, [0], 0), q_values(critic, STATE, [0], 1))


def test_target_network_frozen_between_syncs():
    rng = np.random.default_rng(0)
    critic = JointQCritic(2, 2, 2, target_sync=5, rng=rng)
    x = critic.encode(np.tile(STATE, (4, 1)), [[0], [1], [0], [1]], [0, 0, 1, 1])
    before = critic.predict(np.tile(STATE, (4, 1)), [[0], [1], [0], [1]], [0, 0, 1, 1], target=True)
    for _ in range(4):
        critic.step(x, np.array([0, 1, 0, 1]), np.ones(4))
        after = critic.predict(np.tile(STATE, (4, 1)), [[0], [1], [0], [1]], [0, 0, 1, 1], target=True)
        assert np.array_equal(before, after)
    critic.step(x, np.array([0, 1, 0, 1]), np.ones(4))
    synced = critic.predict(np.tile(STATE, (4, 1)), [[0], [1], [0], [1]], [0, 0, 1, 1], target=True)
    assert not np.array_equal(before, synced)
    assert np.array_equal(synced, critic.predict(np.tile(STATE, (4, 1)), [[0], [1], [0], [1]], [0, 0, 1, 1]))


def test_zero_targets_on_zero_critic_do_not_move_it():
    game = coordination_game()
    batch = collect_rollouts(game, Uniform(), 64, 0)
    critic = constant_critic(0.0)
    curve = train_critic(critic, batch, np.zeros((len(batch), 2)), epochs=3, rng=0)
    assert curve == [0.0, 0.0, 0.0]
    assert all(np.all(a == 0) for a in critic.params.arrays())


def test_critic_converges_to_coordination_payoff():
    game = coordination_game()
    batch = collect_rollouts(game, Uniform(), 512, np.random.default_rng(0))
    critic = JointQCritic(game.state_dim, 2, 2, hidden=(32,), lr=5e-3, rng=np.random.default_rng(1))
    curve = train_critic(critic, batch, monte_carlo_targets(batch), epochs=500, batch_size=256, rng=2)
    assert curve[-1] < curve[0]
    exact = exact_joint_q(COORD)
    for a in range(2):
        for other in range(2):
            q = q_values(critic, STATE, [other], a)
            truth = exact[:, other] if a == 0 else exact[other, :]
            assert np.max(np.abs(q - truth)) <= 0.05


def test_contradictory_targets_converge_to_mean():
    game = coordination_game()
    batch = collect_rollouts(game, Uniform(), 200, np.random.default_rng(0))
    batch.actions[:] = 0
    targets = np.zeros((len(batch), 2))
    targets[::2] = 1.0
    critic = JointQCritic(game.state_dim, 2, 2, hidden=(8,), lr=1e-2, rng=0)
    curve = train_critic(critic, batch, targets, epochs=200, batch_size=200, rng=0)
    # Loss may wobble from minibatch noise but never rise by more than 10% per epoch.
    assert all(b <= 1.1 * a for a, b in zip(curve, curve[1:]))
    assert curve[-1] == pytest.approx(0.25, abs=0.01)
    assert q_values(critic, STATE, [0], 0)[0] == pytest.approx(0.5, abs=0.05)


def test_non_finite_targets_raise():
    batch = collect_rollouts(coordination_game(), Uniform(), 4, 0)
    targets = np.zeros((len(batch), 2))
    targets[0, 0] = np.nan
    with pytest.raises(TrainingError):
        train_critic(JointQCritic(2, 2, 2, rng=0), batch, targets)


def test_target_shape_checked():
    batch = collect_rollouts(coordination_game(), Uniform(), 4, 0)
    with pytest.raises(DimensionError):
        train_critic(JointQCritic(2, 2, 2, rng=0), batch, np.zeros(len(batch)))


def test_td_lambda_one_equals_monte_carlo():
    from asae.envs import MatrixGame
    game = MatrixGame(COORD, steps=3)
    batch = collect_rollouts(game, Uniform(), 10, 0)
    critic = JointQCritic(game.state_dim, 2, 2, rng=0)
    assert np.allclose(td_lambda_targets(critic, batch, 1.0), monte_carlo_targets(batch), atol=1e-12)


def test_state_value_of_constant_critic():
    critic = constant_critic(2.5)
    assert state_value(critic, STATE, [[0], [1], [1]], [0.3, 0.7], 0) == pytest.approx(2.5)


def test_state_value_enumerated_coordination():
    critic = TabularCritic(COORD)
    assert state_value(critic, STATE, [[0], [1]], [0.5, 0.5], 0) == pytest.approx(0.375, abs=1e-15)


def test_state_value_degenerate_policy():
    critic = TabularCritic(COORD)
    assert state_value(critic, STATE, [[0]], [1.0, 0.0], 0) == 1.0


def test_state_value_needs_samples():
    with pytest.raises(ValueError):
        state_value(constant_critic(0.0), STATE, np.zeros((0, 1), dtype=int), [0.5, 0.5], 0)


def test_network_shape_checked_against_layout():
    with pytest.raises(DimensionError):
        JointQCritic(2, 2, 2, params=init_mlp([3, 2], rng=0))
