"""Prey-predator gridworld with item-based predator typing and campsites.

Predators share one action set ``{Left, Right, Up, Down, Stay, Catch,
Skill-act}``. A predator starts typeless; picking up an arrow makes it an
archer (Skill-act kills every prey inside its observation window), picking up
a defence tool makes it a defender (the only type allowed onto campsite
cells). Catch kills one 4-adjacent prey but removes the catcher from the map.
Prey either random-walk or, for the single smart prey, head for the nearest
undefended campsite; any prey entering an undefended campsite ends the
episode with a large negative team reward.

Within a step the resolution order is: predator moves and pickups (ascending
agent index, move conflicts lost by the higher index), predator attacks
(ascending index), prey moves (ascending prey index), then terminal checks.
All randomness comes from the generator seeded at ``reset``, so a trajectory
is a pure function of (map, seed, action sequence).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .maps import MapSpec

LEFT, RIGHT, UP, DOWN, STAY, CATCH, SKILL = range(7)
N_ACTIONS = 7
ACTION_NAMES = ("left", "right", "up", "down", "stay", "catch", "skill")

# (dx, dy) per move action; y grows downward.
MOVE_DELTAS = {LEFT: (-1, 0), RIGHT: (1, 0), UP: (0, -1), DOWN: (0, 1)}
# Candidate order for greedy prey: horizontal axis before vertical.
_PREY_MOVE_ORDER = (LEFT, RIGHT, UP, DOWN)

ITEM_NONE, ITEM_ARROW, ITEM_TOOL = 0, 1, 2

N_CHANNELS = 6  # predator, prey, arrow, tool, campsite, wall
N_STATUS = 4  # carried-item one-hot (none/arrow/tool) + inside-campsite
STATE_DIM = 14  # 5 class mean positions + 2 alive fractions + defended + t/T


class EnvError(RuntimeError):
    """Raised on illegal environment usage (dead-agent actions, double-step...)."""


@dataclass
class EnvConfig:
    obs_radius: int = 4
    reward_kill: float = 1.0
    reward_breach: float = -5.0
    step_penalty: float = -0.01


@dataclass
class EnvState:
    """Mutable per-episode state; copy() gives an independent snapshot."""

    predator_pos: np.ndarray  # (N, 2) int64, columns (x, y)
    predator_alive: np.ndarray  # (N,) bool
    predator_item: np.ndarray  # (N,) int64
    prey_pos: np.ndarray  # (M, 2) int64
    prey_alive: np.ndarray  # (M,) bool
    prey_smart: np.ndarray  # (M,) bool
    ground_items: dict[tuple[int, int], int]
    t: int
    rng: np.random.Generator
    terminal: bool = False
    reason: str | None = None
    kills: int = 0
    breached: bool = field(default=False)

    def copy(self) -> "EnvState":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return EnvState(
            predator_pos=self.predator_pos.copy(),
            predator_alive=self.predator_alive.copy(),
            predator_item=self.predator_item.copy(),
            prey_pos=self.prey_pos.copy(),
            prey_alive=self.prey_alive.copy(),
            prey_smart=self.prey_smart.copy(),
            ground_items=dict(self.ground_items),
            t=self.t,
            rng=rng,
            terminal=self.terminal,
            reason=self.reason,
            kills=self.kills,
            breached=self.breached,
        )


class StepResult(NamedTuple):
    obs: np.ndarray  # (N, D) float32
    state: np.ndarray  # (STATE_DIM,) float32
    avail: np.ndarray  # (N, N_ACTIONS) bool, dead rows all-False
    reward: float
    terminal: bool
    info: dict


def obs_dim(radius: int) -> int:
    return N_CHANNELS * (2 * radius + 1) ** 2 + N_STATUS


class PreyPredatorEnv:
    def __init__(self, spec: MapSpec, cfg: EnvConfig | None = None):
        self.spec = spec
        self.cfg = cfg or EnvConfig()
        if self.cfg.obs_radius < 1:
            raise ValueError(f"obs_radius must be >= 1, got {self.cfg.obs_radius}")
        self.n_agents = spec.n_agents
        self.n_prey = spec.n_prey
        self.obs_dim = obs_dim(self.cfg.obs_radius)
        self.state_dim = STATE_DIM
        self._campsites = tuple(spec.campsites)
        self._campsite_set = frozenset(spec.campsites)
        self.state: EnvState | None = None

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        spec = self.spec
        items = {cell: ITEM_ARROW for cell in spec.arrows}
        items.update({cell: ITEM_TOOL for cell in spec.tools})
        self.state = EnvState(
            predator_pos=np.array(spec.agent_spawns, dtype=np.int64),
            predator_alive=np.ones(self.n_agents, dtype=bool),
            predator_item=np.full(self.n_agents, ITEM_NONE, dtype=np.int64),
            prey_pos=np.array(spec.prey_spawns, dtype=np.int64),
            prey_alive=np.ones(self.n_prey, dtype=bool),
            prey_smart=np.array(spec.smart_prey, dtype=bool),
            ground_items=items,
            t=0,
            rng=np.random.default_rng(seed),
        )
        return self.observations(), self.state_summary(), self.avail_actions()

    def step(self, actions) -> StepResult:
        st = self._require_state()
        if st.terminal:
            raise EnvError("step() called on a finished episode; call reset() first")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_agents,):
            raise EnvError(f"joint action must have shape ({self.n_agents},), got {actions.shape}")

        masks = self.avail_actions()
        info: dict = {"kills": 0, "breach": False, "coerced": [], "conflicts": [],
                      "fizzled": [], "removed": [], "picked": [], "reason": None}
        effective = np.full(self.n_agents, STAY, dtype=np.int64)
        for i in range(self.n_agents):
            a = int(actions[i])
            if not st.predator_alive[i]:
                if a != -1:
                    raise EnvError(f"agent {i} is dead; expected action -1, got {a}")
                continue
            if not 0 <= a < N_ACTIONS:
                raise EnvError(f"agent {i}: action {a} outside [0, {N_ACTIONS})")
            if not masks[i, a]:
                info["coerced"].append(i)
                a = STAY
            effective[i] = a

        reward = self.cfg.step_penalty
        occupied = self._occupied_cells()

        # Phase 1: predator moves and pickups, ascending index.
        for i in range(self.n_agents):
            if not st.predator_alive[i]:
                continue
            a = effective[i]
            if a not in MOVE_DELTAS:
                continue
            dx, dy = MOVE_DELTAS[a]
            x, y = st.predator_pos[i]
            target = (int(x) + dx, int(y) + dy)
            if target in occupied:
                # Lost the cell to a lower-index predator this step (the move
                # was available when masks were computed).
                info["conflicts"].append(i)
                continue
            occupied.discard((int(x), int(y)))
            occupied.add(target)
            st.predator_pos[i] = target
            if st.predator_item[i] == ITEM_NONE and target in st.ground_items:
                st.predator_item[i] = st.ground_items.pop(target)
                info["picked"].append((i, int(st.predator_item[i])))

        # Phase 2: attacks, ascending index.
        for i in range(self.n_agents):
            if not st.predator_alive[i]:
                continue
            a = effective[i]
            if a == CATCH:
                victim = self._adjacent_prey(i)
                if victim is None:
                    # The prey it saw was killed earlier this step.
                    info["fizzled"].append(i)
                    continue
                st.prey_alive[victim] = False
                st.predator_alive[i] = False
                st.kills += 1
                info["kills"] += 1
                info["removed"].append(i)
                reward += self.cfg.reward_kill
            elif a == SKILL:
                px, py = st.predator_pos[i]
                r = self.cfg.obs_radius
                dist = np.abs(st.prey_pos - np.array([px, py])).max(axis=1)
                hit = st.prey_alive & (dist <= r)
                n_hit = int(hit.sum())
                st.prey_alive[hit] = False
                st.kills += n_hit
                info["kills"] += n_hit
                reward += self.cfg.reward_kill * n_hit

        # Phase 3: prey moves, ascending index; stops at a breach.
        if st.prey_alive.any():
            occupied = self._occupied_cells()
            for j in range(self.n_prey):
                if not st.prey_alive[j]:
                    continue
                move = (self._smart_prey_move(j, occupied)
                        if st.prey_smart[j]
                        else self._random_prey_move(j, occupied))
                if move == STAY:
                    continue
                dx, dy = MOVE_DELTAS[move]
                x, y = st.prey_pos[j]
                target = (int(x) + dx, int(y) + dy)
                occupied.discard((int(x), int(y)))
                occupied.add(target)
                st.prey_pos[j] = target
                if target in self._campsite_set:
                    st.breached = True
                    info["breach"] = True
                    reward += self.cfg.reward_breach
                    break

        st.t += 1
        if st.breached:
            st.terminal, st.reason = True, "breach"
        elif not st.prey_alive.any():
            st.terminal, st.reason = True, "cleared"
        elif st.t >= self.spec.max_steps:
            st.terminal, st.reason = True, "timeout"
        info["reason"] = st.reason
        return StepResult(self.observations(), self.state_summary(), self.avail_actions(),
                          float(reward), st.terminal, info)

    # -- action availability -------------------------------------------------

    def action_mask(self, agent: int) -> np.ndarray:
        st = self._require_state()
        if not 0 <= agent < self.n_agents:
            raise EnvError(f"agent index {agent} outside [0, {self.n_agents})")
        if not st.predator_alive[agent]:
            raise EnvError(f"agent {agent} is dead; no actions available")
        mask = np.zeros(N_ACTIONS, dtype=bool)
        mask[STAY] = True
        occupied = self._occupied_cells()
        x, y = (int(v) for v in st.predator_pos[agent])
        has_tool = st.predator_item[agent] == ITEM_TOOL
        for a, (dx, dy) in MOVE_DELTAS.items():
            tx, ty = x + dx, y + dy
            if not (0 <= tx < self.spec.width and 0 <= ty < self.spec.height):
                continue
            if (tx, ty) in occupied:
                continue
            if (tx, ty) in self._campsite_set and not has_tool:
                continue
            mask[a] = True
        if self._adjacent_prey(agent) is not None:
            mask[CATCH] = True
        if st.predator_item[agent] == ITEM_ARROW:
            dist = np.abs(st.prey_pos - st.predator_pos[agent]).max(axis=1)
            if (st.prey_alive & (dist <= self.cfg.obs_radius)).any():
                mask[SKILL] = True
        return mask

    def avail_actions(self) -> np.ndarray:
        st = self._require_state()
        masks = np.zeros((self.n_agents, N_ACTIONS), dtype=bool)
        for i in range(self.n_agents):
            if st.predator_alive[i]:
                masks[i] = self.action_mask(i)
        return masks

    # -- observations ----------------------------------------------------------

    def observations(self) -> np.ndarray:
        st = self._require_state()
        r = self.cfg.obs_radius
        w, h = self.spec.width, self.spec.height
        side = 2 * r + 1
        painted = np.zeros((N_CHANNELS, h + 2 * r, w + 2 * r), dtype=np.float32)
        painted[5] = 1.0
        painted[5, r:r + h, r:r + w] = 0.0
        for (x, y), alive in zip(st.predator_pos, st.predator_alive):
            if alive:
                painted[0, y + r, x + r] = 1.0
        for (x, y), alive in zip(st.prey_pos, st.prey_alive):
            if alive:
                painted[1, y + r, x + r] = 1.0
        for (x, y), item in st.ground_items.items():
            painted[2 if item == ITEM_ARROW else 3, y + r, x + r] = 1.0
        for x, y in self._campsites:
            painted[4, y + r, x + r] = 1.0

        out = np.zeros((self.n_agents, self.obs_dim), dtype=np.float32)
        for i in range(self.n_agents):
            if not st.predator_alive[i]:
                continue
            x, y = (int(v) for v in st.predator_pos[i])
            window = painted[:, y:y + side, x:x + side]
            out[i, :-N_STATUS] = window.reshape(-1)
            item = int(st.predator_item[i])
            out[i, -4 + item] = 1.0
            out[i, -1] = 1.0 if (x, y) in self._campsite_set else 0.0
        return out

    def state_summary(self) -> np.ndarray:
        st = self._require_state()
        w, h = self.spec.width, self.spec.height
        norm = np.array([max(w - 1, 1), max(h - 1, 1)], dtype=np.float64)

        def mean_pos(cells: np.ndarray) -> np.ndarray:
            if len(cells) == 0:
                return np.zeros(2)
            return (np.asarray(cells, dtype=np.float64) / norm).mean(axis=0)

        arrows = [c for c, it in st.ground_items.items() if it == ITEM_ARROW]
        tools = [c for c, it in st.ground_items.items() if it == ITEM_TOOL]
        defended = self._defended_campsites()
        parts = [
            mean_pos(st.predator_pos[st.predator_alive]),
            mean_pos(st.prey_pos[st.prey_alive]),
            mean_pos(np.array(arrows)) if arrows else np.zeros(2),
            mean_pos(np.array(tools)) if tools else np.zeros(2),
            mean_pos(np.array(self._campsites)) if self._campsites else np.zeros(2),
            [st.predator_alive.mean(), st.prey_alive.mean()],
            [len(defended) / len(self._campsites) if self._campsites else 0.0],
            [st.t / self.spec.max_steps],
        ]
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts]).astype(np.float32)

    # -- prey policies ---------------------------------------------------------

    def _prey_legal_moves(self, j: int, occupied: set) -> list[int]:
        # A defended campsite needs no special case: the defender standing on
        # it already makes the cell occupied.
        st = self.state
        x, y = (int(v) for v in st.prey_pos[j])
        legal = []
        for a in _PREY_MOVE_ORDER:
            dx, dy = MOVE_DELTAS[a]
            tx, ty = x + dx, y + dy
            if not (0 <= tx < self.spec.width and 0 <= ty < self.spec.height):
                continue
            if (tx, ty) in occupied:
                continue
            legal.append(a)
        return legal

    def _random_prey_move(self, j: int, occupied: set) -> int:
        options = [STAY] + self._prey_legal_moves(j, occupied)
        return options[int(self.state.rng.integers(len(options)))]

    def _smart_prey_move(self, j: int, occupied: set) -> int:
        st = self.state
        defended = self._defended_campsites()
        targets = [c for c in self._campsites if c not in defended]
        if not targets:
            return self._random_prey_move(j, occupied)
        x, y = (int(v) for v in st.prey_pos[j])
        tx, ty = min(targets, key=lambda c: abs(c[0] - x) + abs(c[1] - y))
        legal = self._prey_legal_moves(j, occupied)
        if not legal:
            return STAY
        # Legal move minimising the remaining distance; the candidate order
        # already breaks ties horizontal-first.
        def dist_after(a: int) -> int:
            dx, dy = MOVE_DELTAS[a]
            return abs(tx - x - dx) + abs(ty - y - dy)

        return min(legal, key=dist_after)

    # -- helpers -----------------------------------------------------------------

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise EnvError("environment not reset")
        return self.state

    def _occupied_cells(self) -> set:
        st = self.state
        cells = {(int(x), int(y)) for (x, y), a in zip(st.predator_pos, st.predator_alive) if a}
        cells |= {(int(x), int(y)) for (x, y), a in zip(st.prey_pos, st.prey_alive) if a}
        return cells

    def _adjacent_prey(self, agent: int) -> int | None:
        """Lowest-index alive prey 4-adjacent to the agent, or None."""
        st = self.state
        d = np.abs(st.prey_pos - st.predator_pos[agent]).sum(axis=1)
        hits = np.flatnonzero(st.prey_alive & (d == 1))
        return int(hits[0]) if len(hits) else None

    def _defended_campsites(self) -> set:
        st = self.state
        out = set()
        for (x, y), alive, item in zip(st.predator_pos, st.predator_alive, st.predator_item):
            if alive and item == ITEM_TOOL and (int(x), int(y)) in self._campsite_set:
                out.add((int(x), int(y)))
        return out
