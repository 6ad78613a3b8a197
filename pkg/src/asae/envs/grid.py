"""A small grid battle: allied learners against scripted enemies.

Actions per ally: 0 stop, 1-4 move north/south/east/west, ``5 + j`` attack
enemy ``j``. Illegal actions (moving off the grid or into an occupied cell,
attacking a dead or out-of-range enemy, acting while dead) do nothing.
Both sides decide on the same positions. Moves resolve first, allies before
enemies in index order, then all attacks land simultaneously.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import StochasticGame

N_MOVES = 4
MOVES = np.array([[0, 1], [0, -1], [1, 0], [-1, 0]])
ATTACK_OFFSET = 1 + N_MOVES
OPPONENTS = ("nearest", "idle", "random")


@dataclass
class GridBattleSpec:
    width: int = 4
    height: int = 3
    n_allies: int = 3
    n_enemies: int = 3
    hp: float = 3.0
    attack_range: float = 2.5
    damage: float = 1.0
    sight_radius: float = 3.0
    max_steps: int = 20
    spawn_columns: int = 1
    opponent: str = "nearest"
    win_bonus: float = 1.0
    damage_taken_weight: float = 0.5

    def __post_init__(self):
        for name in ("width", "height", "n_allies", "n_enemies", "max_steps", "spawn_columns"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.spawn_columns * 2 > self.width:
            raise ValueError("spawn zones of both sides must fit on the grid without overlap")
        if max(self.n_allies, self.n_enemies) > self.spawn_columns * self.height:
            raise ValueError("not enough spawn cells for all units")
        for name in ("hp", "damage", "attack_range", "sight_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.opponent not in OPPONENTS:
            raise ValueError(f"opponent must be one of {OPPONENTS}")

    @property
    def n_actions(self):
        return ATTACK_OFFSET + self.n_enemies


class GridBattle(StochasticGame):
    """Allies are the agents. Reward is shared and shaped:

    ``(damage dealt - 0.5 * damage taken) / (n_enemies * hp)``, plus the win
    bonus on the step the last enemy falls while an ally still stands.
    """

    env_id = "grid-battle"
    has_win_condition = True

    def __init__(self, gamma=0.99, **spec):
        super().__init__()
        self.spec = GridBattleSpec(**spec)
        s = self.spec
        self.gamma = float(gamma)
        self.n_agents = s.n_allies
        self.n_actions = s.n_actions
        self.horizon = s.max_steps
        self.n_units = s.n_allies + s.n_enemies
        self.state_dim = 4 * self.n_units
        self.obs_dim = 4 + 4 * (self.n_units - 1) + self.n_agents + self.n_agents * self.n_actions
        self._normalizer = s.n_enemies * s.hp
        self.pos = np.zeros((self.n_units, 2), dtype=np.int64)
        self.health = np.zeros(self.n_units)
        self._rng = None

    def params(self):
        return {**asdict(self.spec), "gamma": self.gamma}

    # layout helpers

    def _allies(self):
        return range(self.spec.n_allies)

    def _enemies(self):
        return range(self.spec.n_allies, self.n_units)

    def _alive_units(self):
        return self.health > 0

    def alive(self):
        return self.health[: self.spec.n_allies] > 0

    def won(self):
        return not np.any(self.health[self.spec.n_allies:] > 0) and np.any(self.alive())

    def reset(self, rng):
        s = self.spec
        self._rng = rng
        self.t = 0
        self.last_joint_action = None
        cells = s.spawn_columns * s.height
        ally_cells = rng.choice(cells, size=s.n_allies, replace=False)
        enemy_cells = rng.choice(cells, size=s.n_enemies, replace=False)
        self.pos[: s.n_allies, 0] = ally_cells // s.height
        self.pos[: s.n_allies, 1] = ally_cells % s.height
        self.pos[s.n_allies:, 0] = s.width - 1 - enemy_cells // s.height
        self.pos[s.n_allies:, 1] = enemy_cells % s.height
        self.health[:] = s.hp
        return self.state(), self.observations()

    # encodings

    def _unit_features(self, i):
        s = self.spec
        if self.health[i] <= 0:
            return np.zeros(4)
        return np.array([self.pos[i, 0] / max(s.width - 1, 1), self.pos[i, 1] / max(s.height - 1, 1),
                         self.health[i] / s.hp, 1.0])

    def state(self):
        """Full, unmasked features of every unit (critic input only)."""
        return np.concatenate([self._unit_features(i) for i in range(self.n_units)])

    def observations(self):
        s = self.spec
        n, units = self.n_agents, self.n_units
        obs = np.zeros((n, self.obs_dim))
        obs[:, 4 + 4 * (units - 1):] = np.concatenate(
            [np.eye(n), np.repeat(self._last_action_block()[None], n, axis=0)], axis=1
        )
        alive = self.health > 0
        delta = self.pos[None, :, :] - self.pos[:n, None, :]  # [n, units, 2]
        visible = alive[None, :] & (np.hypot(delta[..., 0], delta[..., 1]) <= s.sight_radius)
        rel = np.concatenate(
            [delta / s.sight_radius, (self.health / s.hp)[None, :, None].repeat(n, 0), np.ones((n, units, 1))],
            axis=2,
        ) * visible[..., None]
        for a in range(n):
            if not alive[a]:
                continue
            obs[a, :4] = self._unit_features(a)
            others = np.delete(rel[a], a, axis=0)
            obs[a, 4:4 + 4 * (units - 1)] = others.reshape(-1)
        return obs

    # dynamics

    def _distance(self, i, j):
        (xi, yi), (xj, yj) = self.pos[i].tolist(), self.pos[j].tolist()
        return math.hypot(xi - xj, yi - yj)

    def _try_move(self, i, direction):
        s = self.spec
        target = self.pos[i] + MOVES[direction]
        if not (0 <= target[0] < s.width and 0 <= target[1] < s.height):
            return False
        alive = self._alive_units()
        if np.any(alive & np.all(self.pos == target, axis=1)):
            return False
        self.pos[i] = target
        return True

    def _nearest(self, i, candidates):
        best, best_d = None, np.inf
        for j in candidates:
            if self.health[j] > 0:
                d = self._distance(i, j)
                if d < best_d:
                    best, best_d = j, d
        return best

    def _approach(self, i, j):
        d = self.pos[j] - self.pos[i]
        steps = []
        if d[0] != 0:
            steps.append((abs(d[0]), 2 if d[0] > 0 else 3))
        if d[1] != 0:
            steps.append((abs(d[1]), 0 if d[1] > 0 else 1))
        for _, direction in sorted(steps, key=lambda x: -x[0]):
            if self._try_move(i, direction):
                return

    def _enemy_orders(self):
        """(unit, kind, arg) orders for living enemies."""
        s = self.spec
        orders = []
        for e in self._enemies():
            if self.health[e] <= 0 or s.opponent == "idle":
                continue
            if s.opponent == "random":
                choice = int(self._rng.integers(ATTACK_OFFSET + s.n_allies))
                if 1 <= choice <= N_MOVES:
                    orders.append((e, "move", choice - 1))
                elif choice >= ATTACK_OFFSET:
                    orders.append((e, "attack", choice - ATTACK_OFFSET))
                continue
            target = self._nearest(e, self._allies())
            if target is None:
                continue
            if self._distance(e, target) <= s.attack_range:
                orders.append((e, "attack", target))
            else:
                orders.append((e, "approach", target))
        return orders

    def step(self, joint_action):
        s = self.spec
        joint = self._check_joint(joint_action)
        # Enemies decide on the same pre-step positions the allies observed.
        enemy_orders = self._enemy_orders()
        attacks = []
        for a in self._allies():
            u = int(joint[a])
            if self.health[a] <= 0:
                continue
            if 1 <= u <= N_MOVES:
                self._try_move(a, u - 1)
            elif u >= ATTACK_OFFSET:
                attacks.append((a, s.n_allies + u - ATTACK_OFFSET))
        for e, kind, arg in enemy_orders:
            if kind == "move":
                self._try_move(e, arg)
            elif kind == "approach":
                self._approach(e, arg)
            else:
                attacks.append((e, arg))
        incoming = np.zeros(self.n_units)
        for src, dst in attacks:
            if self.health[dst] > 0 and self._distance(src, dst) <= s.attack_range:
                incoming[dst] += s.damage
        removed = np.minimum(incoming, self.health)
        self.health -= removed
        dealt = removed[s.n_allies:].sum()
        taken = removed[: s.n_allies].sum()
        self.t += 1
        self.last_joint_action = joint
        enemies_dead = not np.any(self.health[s.n_allies:] > 0)
        allies_dead = not np.any(self.alive())
        win = enemies_dead and not allies_dead
        reward = (dealt - s.damage_taken_weight * taken) / self._normalizer + (s.win_bonus if win else 0.0)
        done = enemies_dead or allies_dead or self.t >= s.max_steps
        return self.state(), self.observations(), float(reward), done, {"win": win}

    def expert_action(self, rng=None):
        """Focus fire: every ally targets the weakest living enemy."""
        s = self.spec
        enemies = [e for e in self._enemies() if self.health[e] > 0]
        joint = np.zeros(self.n_agents, dtype=np.int64)
        if not enemies:
            return joint
        target = min(enemies, key=lambda e: (self.health[e], e))
        for a in self._allies():
            if self.health[a] <= 0:
                continue
            if self._distance(a, target) <= s.attack_range:
                joint[a] = ATTACK_OFFSET + target - s.n_allies
            else:
                d = self.pos[target] - self.pos[a]
                if abs(d[0]) >= abs(d[1]):
                    joint[a] = 1 + (2 if d[0] > 0 else 3)
                else:
                    joint[a] = 1 + (0 if d[1] > 0 else 1)
        return joint
