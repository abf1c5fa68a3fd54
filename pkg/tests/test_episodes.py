import json

import numpy as np
import pytest

from rolemix.env import EnvConfig, PreyPredatorEnv, STAY
from rolemix.episodes import (
    EpisodeRecord, TraceError, collect_episode, load_episodes, read_traces,
    replay_episode, write_traces,
)
from rolemix.expert import ScriptedExpert
from rolemix.maps import get_map, parse_map


def random_actor(policy_seed):
    rng = np.random.default_rng(policy_seed)

    def act(env, obs, avail):
        actions = np.full(env.n_agents, -1, dtype=np.int64)
        for i in range(env.n_agents):
            if env.state.predator_alive[i]:
                options = np.flatnonzero(avail[i])
                actions[i] = options[int(rng.integers(len(options)))]
        return actions

    return act


@pytest.fixture(scope="module")
def expert_records():
    spec = get_map("pretrain_4a2c")
    env = PreyPredatorEnv(spec, EnvConfig())
    expert = ScriptedExpert(spec)
    return spec, [collect_episode(env, expert, seed=s) for s in range(4)]


def test_collect_episode_shapes(tiny_spec):
    env = PreyPredatorEnv(tiny_spec, EnvConfig())
    rec = collect_episode(env, random_actor(0), seed=0)
    n, d = tiny_spec.n_agents, env.obs_dim
    length = rec.length
    assert rec.obs.shape == (length + 1, n, d)
    assert rec.state.shape == (length + 1, env.state_dim)
    assert rec.avail.shape == (length + 1, n, 7)
    assert rec.alive.shape == (length + 1, n)
    assert rec.pred_pos.shape == (length + 1, n, 2)
    assert rec.actions.shape == (length, n)
    assert rec.rewards.shape == (length,)
    assert rec.reason in ("breach", "cleared", "timeout")
    assert rec.episode_return == pytest.approx(rec.rewards.sum())
    assert rec.map_hash == tiny_spec.content_hash


def test_dead_agents_logged_as_minus_one():
    spec = parse_map("""\
name: sacrifice
max_steps: 6
grid:
.....
.Ap..
....p
""")
    env = PreyPredatorEnv(spec, EnvConfig())
    from rolemix.env import CATCH

    def act(env_, obs, avail):
        if env_.state.predator_alive[0]:
            return np.array([CATCH if avail[0, CATCH] else STAY])
        return np.array([-1])

    rec = collect_episode(env, act, seed=0)
    assert not rec.alive[-1, 0], "the catcher is removed with its prey"
    t_dead = int(np.flatnonzero(~rec.alive[:, 0])[0])
    assert np.all(rec.actions[t_dead:, 0] == -1)
    assert np.all(rec.actions[:t_dead - 1, 0] != -1)


def test_cleared_fraction_and_breached(expert_records):
    _, records = expert_records
    for rec in records:
        assert rec.cleared_fraction == pytest.approx(rec.kills / rec.n_prey)
        assert not rec.breached


def test_trace_round_trip(tmp_path, expert_records):
    spec, records = expert_records
    path = tmp_path / "traces.jsonl"
    write_traces(path, records)
    episodes = read_traces(path)
    assert len(episodes) == len(records)
    for ep, rec in zip(episodes, records):
        assert ep["header"]["map"] == spec.name
        assert ep["header"]["map_hash"] == spec.content_hash
        assert ep["end"]["length"] == rec.length
        assert len(ep["steps"]) == rec.length

    replayed = load_episodes(path, spec, EnvConfig())
    for rep, rec in zip(replayed, records):
        assert np.array_equal(rep.rewards, rec.rewards)
        assert np.array_equal(rep.actions, rec.actions)
        assert np.array_equal(rep.obs, rec.obs)
        assert rep.reason == rec.reason


def test_read_rejects_malformed_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"kind": "header"\n')
    with pytest.raises(TraceError, match="bad.jsonl:1"):
        read_traces(path)


def test_read_rejects_step_outside_episode(tmp_path):
    path = tmp_path / "orphan.jsonl"
    path.write_text('{"kind": "step", "t": 0}\n')
    with pytest.raises(TraceError, match="outside an episode"):
        read_traces(path)


def test_read_rejects_truncated_episode(tmp_path, expert_records):
    spec, records = expert_records
    path = tmp_path / "trunc.jsonl"
    write_traces(path, records[:1])
    lines = path.read_text().strip().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")  # drop the end record
    with pytest.raises(TraceError, match="without end"):
        read_traces(path)


def test_read_rejects_unknown_kind(tmp_path):
    path = tmp_path / "odd.jsonl"
    path.write_text('{"kind": "wat"}\n')
    with pytest.raises(TraceError, match="unknown record kind"):
        read_traces(path)


def test_replay_rejects_wrong_map(tmp_path, expert_records, tiny_spec):
    spec, records = expert_records
    path = tmp_path / "traces.jsonl"
    write_traces(path, records[:1])
    ep = read_traces(path)[0]
    with pytest.raises(TraceError, match="map hash"):
        replay_episode(tiny_spec, EnvConfig(), ep["header"], ep["steps"], ep["end"])


def test_replay_rejects_tampered_rewards(tmp_path, expert_records):
    spec, records = expert_records
    path = tmp_path / "traces.jsonl"
    write_traces(path, records[:1])
    lines = path.read_text().strip().splitlines()
    row = json.loads(lines[1])
    row["reward"] += 1.0
    lines[1] = json.dumps(row)
    path.write_text("\n".join(lines) + "\n")
    ep = read_traces(path)[0]
    with pytest.raises(TraceError, match="rewards differ"):
        replay_episode(spec, EnvConfig(), ep["header"], ep["steps"], ep["end"])


def test_replay_rejects_dropped_step(tmp_path, expert_records):
    spec, records = expert_records
    path = tmp_path / "traces.jsonl"
    write_traces(path, records[:1])
    lines = path.read_text().strip().splitlines()
    del lines[1]
    path.write_text("\n".join(lines) + "\n")
    ep = read_traces(path)[0]
    with pytest.raises(TraceError):
        replay_episode(spec, EnvConfig(), ep["header"], ep["steps"], ep["end"])


def test_timeout_episode_records_reason():
    spec = parse_map("""\
name: idle
max_steps: 3
grid:
A....
.....
....p
""")
    env = PreyPredatorEnv(spec, EnvConfig())
    rec = collect_episode(env, lambda e, o, a: np.array([STAY]), seed=0)
    assert rec.reason == "timeout"
    assert rec.length == 3
