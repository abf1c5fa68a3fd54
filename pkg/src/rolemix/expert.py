"""Scripted demonstration policy and demo-set generation.

The expert splits the team by item proximity: for every defence tool the
closest still-unassigned predator becomes a defender (fetch the tool, then
stand on the paired campsite); everyone else becomes an attacker (fetch an
arrow, then chase the nearest prey and Skill-act once it is inside the
observation window). All assignments and tie-breaks are deterministic, so a
demo set is a pure function of (map, env config, seed).

Demo episodes are kept only when the team clears all prey without a breach;
if fewer than half of the attempted episodes succeed, generation aborts
rather than producing a misleading demo set.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .env import (CATCH, ITEM_ARROW, ITEM_TOOL, MOVE_DELTAS, SKILL, STAY,
                  EnvConfig, PreyPredatorEnv)
from .episodes import EpisodeRecord, collect_episode, load_episodes, write_traces
from .maps import MapSpec

DEMO_TRACES = "traces.jsonl"
DEMO_MANIFEST = "manifest.json"


class DemoError(RuntimeError):
    """Raised when demo generation or loading cannot produce a sound demo set."""


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def assign_roles(spec: MapSpec) -> tuple[dict[int, tuple], dict[int, tuple | None]]:
    """Static role assignment from spawn geometry.

    Returns (defenders, attackers): defenders maps agent index to its
    (tool cell, campsite cell) pair, attackers maps agent index to an arrow
    cell or None when arrows run out.
    """
    unassigned = list(range(spec.n_agents))
    defenders: dict[int, tuple] = {}
    free_camps = list(spec.campsites)
    for tool in spec.tools:
        if not unassigned:
            break
        agent = min(unassigned, key=lambda i: (_manhattan(spec.agent_spawns[i], tool), i))
        unassigned.remove(agent)
        camp = min(free_camps, key=lambda c: _manhattan(c, tool)) if free_camps else None
        if camp is not None:
            free_camps.remove(camp)
        defenders[agent] = (tool, camp)
    attackers: dict[int, tuple | None] = {}
    free_arrows = list(spec.arrows)
    for agent in unassigned:
        arrow = (min(free_arrows, key=lambda c: _manhattan(c, spec.agent_spawns[agent]))
                 if free_arrows else None)
        if arrow is not None:
            free_arrows.remove(arrow)
        attackers[agent] = arrow
    return defenders, attackers


class ScriptedExpert:
    """Stateless per-step controller; all decisions read the live EnvState."""

    def __init__(self, spec: MapSpec):
        self.defenders, self.attackers = assign_roles(spec)

    def actions(self, env: PreyPredatorEnv, obs=None, avail=None) -> np.ndarray:
        st = env.state
        out = np.full(env.n_agents, -1, dtype=np.int64)
        for i in range(env.n_agents):
            if not st.predator_alive[i]:
                continue
            out[i] = self._act_one(env, i)
        return out

    # `obs`/`avail` are accepted so the class plugs into collect_episode.
    __call__ = actions

    def _act_one(self, env: PreyPredatorEnv, i: int) -> int:
        st = env.state
        mask = env.action_mask(i)
        item = int(st.predator_item[i])
        pos = (int(st.predator_pos[i][0]), int(st.predator_pos[i][1]))

        if i in self.defenders and item != ITEM_ARROW:
            tool, camp = self.defenders[i]
            if item == ITEM_TOOL:
                if camp is None or pos == camp:
                    return STAY
                return _greedy_move(env, i, mask, camp)
            target = _nearest_ground_item(st, pos, ITEM_TOOL, preferred=tool)
            if target is not None:
                return _greedy_move(env, i, mask, target)
            # Tool lost to someone else: fall through and hunt bare-handed.

        if item == ITEM_ARROW:
            if mask[SKILL]:
                return SKILL
            prey = _nearest_prey(st, pos)
            return _greedy_move(env, i, mask, prey) if prey else STAY

        arrow = _nearest_ground_item(st, pos, ITEM_ARROW, preferred=self.attackers.get(i))
        if arrow is not None:
            return _greedy_move(env, i, mask, arrow)
        if mask[CATCH]:
            return CATCH
        prey = _nearest_prey(st, pos)
        return _greedy_move(env, i, mask, prey) if prey else STAY


def _nearest_ground_item(st, pos, kind, preferred=None):
    if preferred is not None and st.ground_items.get(preferred) == kind:
        return preferred
    cells = sorted(c for c, it in st.ground_items.items() if it == kind)
    if not cells:
        return None
    return min(cells, key=lambda c: _manhattan(c, pos))


def _nearest_prey(st, pos):
    alive = np.flatnonzero(st.prey_alive)
    if not len(alive):
        return None
    d = np.abs(st.prey_pos[alive] - np.array(pos)).sum(axis=1)
    j = alive[int(np.argmin(d))]
    return (int(st.prey_pos[j][0]), int(st.prey_pos[j][1]))


def _greedy_move(env: PreyPredatorEnv, i: int, mask: np.ndarray, target) -> int:
    """Legal move that reduces Manhattan distance to target, else Stay."""
    st = env.state
    x, y = (int(v) for v in st.predator_pos[i])
    best, best_d = STAY, _manhattan((x, y), target)
    for a, (dx, dy) in MOVE_DELTAS.items():
        if not mask[a]:
            continue
        d = _manhattan((x + dx, y + dy), target)
        if d < best_d:
            best, best_d = a, d
    return best


def generate_demos(spec: MapSpec, cfg: EnvConfig, count: int, seed: int,
                   max_attempts: int | None = None) -> tuple[list[EpisodeRecord], dict]:
    """Roll expert episodes, keeping successful ones.

    Aborts with DemoError when the success rate drops below one half, which
    signals that the map and the scripted policy disagree (for example an
    unreachable tool).
    """
    expert = ScriptedExpert(spec)
    if max_attempts is None:
        max_attempts = 2 * count
    seed_rng = np.random.default_rng(seed)
    kept: list[EpisodeRecord] = []
    attempts = 0
    while len(kept) < count and attempts < max_attempts:
        ep_seed = int(seed_rng.integers(0, 2**63 - 1))
        env = PreyPredatorEnv(spec, cfg)
        rec = collect_episode(env, expert, ep_seed)
        attempts += 1
        if rec.reason == "cleared":
            kept.append(rec)
    if len(kept) < count:
        raise DemoError(
            f"expert cleared only {len(kept)}/{attempts} episodes on {spec.name!r} "
            f"(needed {count} at >=50% success); the map likely breaks the script"
        )
    stats = {
        "map": spec.name,
        "map_hash": spec.content_hash,
        "count": len(kept),
        "attempts": attempts,
        "seed": seed,
        "env": asdict(cfg),
        "mean_return": float(np.mean([r.episode_return for r in kept])),
        "mean_length": float(np.mean([r.length for r in kept])),
    }
    return kept, stats


def save_demos(out_dir, records: list[EpisodeRecord], stats: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_traces(os.path.join(out_dir, DEMO_TRACES), records)
    with open(os.path.join(out_dir, DEMO_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_demos(demo_dir, spec: MapSpec, cfg: EnvConfig) -> list[EpisodeRecord]:
    manifest_path = os.path.join(demo_dir, DEMO_MANIFEST)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DemoError(f"demo directory {demo_dir!r} has no readable manifest: {exc}") from exc
    if manifest.get("map_hash") != spec.content_hash:
        raise DemoError(
            f"demos were generated on map hash {manifest.get('map_hash')}, "
            f"but {spec.name!r} hashes to {spec.content_hash}"
        )
    if manifest.get("env") != asdict(cfg):
        raise DemoError("demo env config does not match the requested env config")
    records = load_episodes(os.path.join(demo_dir, DEMO_TRACES), spec, cfg)
    if len(records) != manifest.get("count"):
        raise DemoError(
            f"manifest promises {manifest.get('count')} episodes, file holds {len(records)}"
        )
    return records
