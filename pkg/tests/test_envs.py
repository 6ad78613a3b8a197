import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asae.diffmath import init_mlp
from asae.envs import (
    GridBattle,
    MatrixGame,
    coordination_game,
    collect_expert_rollouts,
    collect_rollouts,
    discounted_returns,
    exact_joint_q,
    make_game,
)
from asae.envs.matrix import MatrixGameSpec
from asae.exceptions import CapacityError, DataError, DimensionError
from asae.policy import PolicySnapshot


class FixedPolicy:
    """Same distribution for every observation."""

    def __init__(self, probs):
        self.probs_table = np.asarray(probs, dtype=float)
        self.n_actions = self.probs_table.shape[1]
        self.digest = "fixed"

    def probs(self, agent, obs):
        return np.tile(self.probs_table[agent], (len(obs), 1))


def uniform(n, k):
    return FixedPolicy(np.full((n, k), 1.0 / k))


# matrix games

def test_matrix_reset_gives_constant_state():
    game = coordination_game()
    s1, o1 = game.reset(np.random.default_rng(0))
    s2, o2 = game.reset(np.random.default_rng(1))
    assert np.array_equal(s1, s2) and np.array_equal(o1, o2)
    assert o1.shape == (2, game.obs_dim)


@pytest.mark.parametrize("joint", list(itertools.product(range(2), repeat=2)))
def test_matrix_step_reads_payoff(joint):
    game = coordination_game()
    game.reset(None)
    _, _, r, done, _ = game.step(joint)
    assert r == [[1.0, 0.0], [0.0, 0.5]][joint[0]][joint[1]]
    assert done


def test_zero_payoff_gives_zero_reward():
    game = MatrixGame(np.zeros((3, 3, 3)))
    game.reset(None)
    assert game.step([0, 0, 0])[2] == 0.0


def test_matrix_step_rejects_wrong_arity():
    game = coordination_game()
    game.reset(None)
    with pytest.raises((DimensionError, ValueError)):
        game.step([0])


def test_payoff_shape_must_be_square():
    with pytest.raises(DimensionError):
        MatrixGameSpec(np.zeros((2, 3)))


def test_payoff_must_be_finite():
    with pytest.raises(ValueError):
        MatrixGameSpec([[np.inf, 0], [0, 0]])


def test_last_action_block_in_observation():
    game = MatrixGame(np.zeros((2, 2)), steps=2)
    game.reset(None)
    _, obs, _, done, _ = game.step([1, 0])
    assert not done
    assert np.array_equal(obs[0, -4:], [0, 1, 1, 0])
    assert np.array_equal(obs[:, 1:3], np.eye(2))


# exact Q

def test_one_step_q_is_payoff():
    payoff = np.random.default_rng(0).normal(size=(3, 3))
    assert np.array_equal(exact_joint_q(payoff), payoff)


def test_coordination_q_entries():
    q = exact_joint_q([[1.0, 0.0], [0.0, 0.5]])
    assert q[0, 0] == 1.0 and q[1, 1] == 0.5


def test_two_step_q_adds_discounted_mean():
    payoff = np.array([[1.0, 0.0], [0.0, 0.5]])
    gamma = 0.9
    q = exact_joint_q(MatrixGameSpec(payoff, steps=2), [[0.5, 0.5], [0.5, 0.5]], gamma)
    # Brute force: average the second-round payoff over all four joint actions.
    second = np.mean([payoff[i, j] for i in range(2) for j in range(2)])
    assert np.allclose(q, payoff + gamma * second, atol=1e-15)
    last = exact_joint_q(MatrixGameSpec(payoff, steps=2), [[0.5, 0.5], [0.5, 0.5]], gamma, all_steps=True)[1]
    assert np.array_equal(last, payoff)


def test_exact_q_capacity():
    with pytest.raises(CapacityError):
        exact_joint_q(np.zeros((10,) * 6))


# grid battle

def test_grid_reset_deterministic():
    game = GridBattle()
    s1, o1 = game.reset(np.random.default_rng(5))
    s2, o2 = game.reset(np.random.default_rng(5))
    assert np.array_equal(s1, s2) and np.array_equal(o1, o2)


def test_grid_reset_seeds_differ_at_expected_rate():
    # Allies and enemies each take 3 of 3 spawn cells in the default layout, so
    # use a wider spawn zone where placements can differ.
    game = GridBattle(width=6, height=3, spawn_columns=2)
    cells = 2 * 3
    placements = (comb(cells, 3) * 6) ** 2  # ordered choices per side
    rate_same = np.mean([
        np.array_equal(game.reset(np.random.default_rng(2 * k))[0], game.reset(np.random.default_rng(2 * k + 1))[0])
        for k in range(200)
    ])
    assert rate_same <= 1.0 / placements + 3 * np.sqrt(1.0 / 200)


def one_on_one(**kw):
    game = GridBattle(width=4, height=1, n_allies=1, n_enemies=1, opponent="idle", **kw)
    game.reset(np.random.default_rng(0))
    return game


def test_grid_attack_reward_is_damage_over_normalizer():
    game = one_on_one(attack_range=3.5, damage=1.0, hp=3.0)
    _, _, r, done, info = game.step([5])
    assert r == pytest.approx(1.0 / 3.0)
    assert not done and not info["win"]


def test_grid_win_bonus_on_final_blow():
    game = one_on_one(attack_range=3.5, damage=1.0, hp=1.0)
    _, _, r, done, info = game.step([5])
    assert done and info["win"]
    assert r == pytest.approx(1.0 + 1.0)


def test_grid_out_of_range_attack_is_noop():
    game = one_on_one(attack_range=1.0)
    _, _, r, _, _ = game.step([5])
    assert r == 0.0


def test_grid_damage_taken_is_penalized():
    game = GridBattle(width=2, height=1, n_allies=1, n_enemies=1, hp=2.0)
    game.reset(np.random.default_rng(0))
    _, _, r, _, _ = game.step([0])
    assert r == pytest.approx(-0.5 * 1.0 / 2.0)


def test_grid_all_noops_without_combat():
    game = GridBattle(width=8, height=3, attack_range=1.0, opponent="idle")
    game.reset(np.random.default_rng(0))
    for _ in range(game.horizon):
        _, obs, r, done, _ = game.step(np.zeros(game.n_agents, dtype=int))
        assert r == 0.0 and np.all(np.isfinite(obs))
    assert done


def test_grid_illegal_moves_are_noops():
    game = one_on_one()
    before = game.pos.copy()
    game.step([4])  # west from column 0
    assert np.array_equal(game.pos, before)


def test_grid_partial_observability_zeroes_far_units():
    game = GridBattle(width=8, height=1, n_allies=1, n_enemies=1, sight_radius=2.0, opponent="idle")
    game.reset(np.random.default_rng(0))
    obs = game.observations()
    assert np.all(obs[0, 4:8] == 0.0)
    game.pos[1] = [2, 0]
    assert np.any(game.observations()[0, 4:8] != 0.0)


def test_grid_dead_agent_sees_nothing_but_ids():
    game = GridBattle()
    game.reset(np.random.default_rng(0))
    game.health[0] = 0
    obs = game.observations()
    units = game.n_units
    assert np.all(obs[0, :4 + 4 * (units - 1)] == 0.0)
    assert obs[0, 4 + 4 * (units - 1)] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_grid_random_play_is_well_formed(seed):
    rng = np.random.default_rng(seed)
    game = GridBattle(opponent="random")
    state, obs = game.reset(rng)
    for _ in range(game.horizon):
        state, obs, r, done, _ = game.step(rng.integers(game.n_actions, size=game.n_agents))
        assert np.isfinite(r) and obs.shape == (game.n_agents, game.obs_dim)
        assert state.shape == (game.state_dim,)
        assert np.all(game.health >= 0)
        if done:
            break
    assert done


def test_make_game_rejects_unknown_id():
    with pytest.raises(ValueError, match="unknown environment"):
        make_game("chess")


# rollouts

def test_discounted_returns_restart_at_episode_boundaries():
    g = discounted_returns([1.0, 1.0, 2.0], [False, True, True], 0.5)
    assert np.array_equal(g, [1.5, 1.0, 2.0])


def test_one_step_returns_equal_rewards():
    batch = collect_rollouts(coordination_game(), uniform(2, 2), 50, np.random.default_rng(0))
    assert np.array_equal(batch.returns, batch.rewards)


def test_one_hot_policy_has_zero_log_probs():
    batch = collect_rollouts(coordination_game(), FixedPolicy([[1.0, 0.0], [0.0, 1.0]]), 10, 0)
    assert np.all(batch.log_probs == 0.0)
    assert np.all(batch.actions == [0, 1])


def test_uniform_joint_action_frequencies():
    n_ep = 10_000
    batch = collect_rollouts(coordination_game(), uniform(2, 2), n_ep, np.random.default_rng(1))
    counts = np.bincount(batch.actions[:, 0] * 2 + batch.actions[:, 1], minlength=4)
    se = np.sqrt(0.25 * 0.75 / n_ep)
    assert np.all(np.abs(counts / n_ep - 0.25) <= 3 * se)


def test_rollout_batch_validates_against_snapshot():
    game = GridBattle()
    rng = np.random.default_rng(0)
    actors = [init_mlp([game.obs_dim, 16, game.n_actions], rng=rng) for _ in range(game.n_agents)]
    snap = PolicySnapshot(actors)
    batch = collect_rollouts(game, snap, 8, rng)
    batch.validate(snap)
    assert batch.snapshot_digest == snap.digest
    assert np.all(np.isfinite(batch.rewards))
    batch.log_probs[0, 0] += 1e-6
    with pytest.raises(DataError):
        batch.validate(snap)


def test_return_recursion_on_grid():
    game = GridBattle()
    batch = collect_rollouts(game, uniform(game.n_agents, game.n_actions), 20, np.random.default_rng(3))
    batch.validate()
    batch.returns[0] += 1e-9
    with pytest.raises(DataError):
        batch.validate()


def test_rollouts_deterministic_under_seed():
    game = GridBattle()
    pol = uniform(game.n_agents, game.n_actions)
    a = collect_rollouts(game, pol, 5, np.random.default_rng(4))
    b = collect_rollouts(game, pol, 5, np.random.default_rng(4))
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)


def test_actor_width_must_match_actions():
    with pytest.raises(DimensionError):
        collect_rollouts(coordination_game(), uniform(2, 3), 1)


def test_expert_rollouts_win_default_battle():
    batch = collect_expert_rollouts(GridBattle(), 20, np.random.default_rng(0))
    assert np.nanmean(batch.wins) >= 0.9
    assert np.all(batch.probs.max(axis=-1) == 1.0)
