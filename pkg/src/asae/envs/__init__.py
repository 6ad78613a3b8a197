"""Cooperative games: matrix games, the grid battle, and rollout collection."""

from .base import StochasticGame
from .grid import GridBattle, GridBattleSpec
from .matrix import MatrixGame, MatrixGameSpec, coordination_game, dummy_agent_game, exact_joint_q
from .rollout import TrajectoryBatch, collect_expert_rollouts, collect_rollouts, discounted_returns

GAMES = {
    "matrix": MatrixGame,
    "coordination": coordination_game,
    "dummy-agent": dummy_agent_game,
    "grid-battle": GridBattle,
}


def make_game(env_id, **params):
    """Build a game from its id and keyword parameters."""
    try:
        factory = GAMES[env_id]
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; choose from {sorted(GAMES)}") from None
    return factory(**params)


__all__ = [
    "GAMES", "GridBattle", "GridBattleSpec", "MatrixGame", "MatrixGameSpec", "StochasticGame",
    "TrajectoryBatch", "collect_expert_rollouts", "collect_rollouts", "coordination_game", "discounted_returns",
    "dummy_agent_game", "exact_joint_q", "make_game",
]
