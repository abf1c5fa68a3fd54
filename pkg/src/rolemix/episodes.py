"""Episode records, rollout collection, and line-delimited trace files.

An :class:`EpisodeRecord` keeps everything the learner and the analysis tools
need: observations (binary, stored as uint8), availability masks, global
state summaries, actions, rewards, alive flags and predator positions for
every step. Traces are serialised as JSON lines (one header, one line per
step, one summary) and can be replayed through a fresh environment to
reconstruct the full record, which doubles as an integrity check: a trace
whose rewards do not reproduce is rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import EnvConfig, PreyPredatorEnv
from .maps import MapSpec

TRACE_SCHEMA_VERSION = 1


class TraceError(ValueError):
    """Raised when a trace file is malformed or fails replay verification."""


@dataclass
class EpisodeRecord:
    map_name: str
    map_hash: str
    seed: int
    n_prey: int
    obs: np.ndarray       # (L+1, N, D) uint8
    state: np.ndarray     # (L+1, S) float32
    avail: np.ndarray     # (L+1, N, A) bool
    alive: np.ndarray     # (L+1, N) bool
    pred_pos: np.ndarray  # (L+1, N, 2) int16
    actions: np.ndarray   # (L, N) int8, -1 for dead agents
    rewards: np.ndarray   # (L,) float32
    reason: str
    kills: int

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def breached(self) -> bool:
        return self.reason == "breach"

    @property
    def cleared_fraction(self) -> float:
        return self.kills / self.n_prey


# An action function maps (env, obs, avail) to one int action per agent,
# with -1 for dead agents.
ActFn = Callable[[PreyPredatorEnv, np.ndarray, np.ndarray], np.ndarray]


def collect_episode(env: PreyPredatorEnv, act_fn: ActFn, seed: int) -> EpisodeRecord:
    obs, state, avail = env.reset(seed)
    obs_l, state_l, avail_l = [obs], [state], [avail]
    alive_l = [env.state.predator_alive.copy()]
    pos_l = [env.state.predator_pos.copy()]
    act_l, rew_l = [], []
    terminal = False
    while not terminal:
        actions = np.asarray(act_fn(env, obs, avail), dtype=np.int64)
        res = env.step(actions)
        obs, state, avail = res.obs, res.state, res.avail
        act_l.append(actions)
        rew_l.append(res.reward)
        obs_l.append(obs)
        state_l.append(state)
        avail_l.append(avail)
        alive_l.append(env.state.predator_alive.copy())
        pos_l.append(env.state.predator_pos.copy())
        terminal = res.terminal
    return EpisodeRecord(
        map_name=env.spec.name,
        map_hash=env.spec.content_hash,
        seed=seed,
        n_prey=env.n_prey,
        obs=np.asarray(obs_l).astype(np.uint8),
        state=np.asarray(state_l, dtype=np.float32),
        avail=np.asarray(avail_l),
        alive=np.asarray(alive_l),
        pred_pos=np.asarray(pos_l, dtype=np.int16),
        actions=np.asarray(act_l, dtype=np.int8),
        rewards=np.asarray(rew_l, dtype=np.float32),
        reason=env.state.reason,
        kills=env.state.kills,
    )


def write_traces(path, records: list[EpisodeRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "kind": "header", "version": TRACE_SCHEMA_VERSION,
                "map": rec.map_name, "map_hash": rec.map_hash, "seed": rec.seed,
                "n_agents": rec.alive.shape[1], "n_prey": rec.n_prey,
                "pos": rec.pred_pos[0].tolist(),
            }) + "\n")
            for t in range(rec.length):
                fh.write(json.dumps({
                    "kind": "step", "t": t,
                    "actions": rec.actions[t].tolist(),
                    "reward": float(rec.rewards[t]),
                    "pos": rec.pred_pos[t + 1].tolist(),
                    "alive": rec.alive[t + 1].astype(int).tolist(),
                }) + "\n")
            fh.write(json.dumps({
                "kind": "end", "length": rec.length,
                "return": rec.episode_return, "kills": rec.kills,
                "reason": rec.reason,
            }) + "\n")


def read_traces(path) -> list[dict]:
    """Read raw trace lines grouped per episode: [{header, steps, end}, ...]."""
    episodes = []
    current = None
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise TraceError(f"{path}:{ln}: not valid JSON: {exc}") from exc
            kind = row.get("kind")
            if kind == "header":
                if current is not None:
                    raise TraceError(f"{path}:{ln}: header before previous episode ended")
                current = {"header": row, "steps": [], "end": None}
            elif kind == "step":
                if current is None:
                    raise TraceError(f"{path}:{ln}: step record outside an episode")
                current["steps"].append(row)
            elif kind == "end":
                if current is None:
                    raise TraceError(f"{path}:{ln}: end record outside an episode")
                current["end"] = row
                episodes.append(current)
                current = None
            else:
                raise TraceError(f"{path}:{ln}: unknown record kind {kind!r}")
    if current is not None:
        raise TraceError(f"{path}: truncated file, episode without end record")
    return episodes


def replay_episode(spec: MapSpec, cfg: EnvConfig, header: dict, steps: list[dict],
                   end: dict | None = None) -> EpisodeRecord:
    """Re-run a traced episode and verify it reproduces the logged rewards."""
    if header["map_hash"] != spec.content_hash:
        raise TraceError(
            f"trace was recorded on map hash {header['map_hash']}, "
            f"but {spec.name!r} hashes to {spec.content_hash}"
        )
    env = PreyPredatorEnv(spec, cfg)
    it = iter(steps)

    def act(env_, obs_, avail_):
        row = next(it)
        return np.asarray(row["actions"], dtype=np.int64)

    try:
        rec = collect_episode(env, act, int(header["seed"]))
    except StopIteration:
        raise TraceError("trace has fewer steps than the episode it claims to describe") from None
    if next(it, None) is not None:
        raise TraceError("trace has more steps than the episode it describes")
    logged = np.array([s["reward"] for s in steps], dtype=np.float32)
    if not np.array_equal(logged, rec.rewards):
        raise TraceError("replayed rewards differ from the trace; file is stale or corrupt")
    if end is not None and end.get("reason") != rec.reason:
        raise TraceError(
            f"trace claims terminal reason {end.get('reason')!r}, replay gives {rec.reason!r}"
        )
    return rec


def load_episodes(path, spec: MapSpec, cfg: EnvConfig) -> list[EpisodeRecord]:
    return [replay_episode(spec, cfg, ep["header"], ep["steps"], ep["end"])
            for ep in read_traces(path)]
