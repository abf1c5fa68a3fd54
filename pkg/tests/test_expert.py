import json

import numpy as np
import pytest

from rolemix.env import EnvConfig, ITEM_TOOL, PreyPredatorEnv
from rolemix.episodes import collect_episode
from rolemix.expert import DemoError, ScriptedExpert, assign_roles, generate_demos, load_demos, save_demos
from rolemix.maps import get_map, parse_map


def test_role_assignment_pretrain():
    spec = get_map("pretrain_4a2c")
    defenders, attackers = assign_roles(spec)
    assert set(defenders) == {0, 1}, "the two agents under the tools defend"
    assert set(attackers) == {2, 3}
    for agent, (tool, camp) in defenders.items():
        assert tool in spec.tools
        assert camp in spec.campsites
    camps = [camp for _, camp in defenders.values()]
    assert len(set(camps)) == 2, "each defender gets its own campsite"
    arrows = [a for a in attackers.values() if a is not None]
    assert len(set(arrows)) == len(arrows) == 2


def test_role_assignment_with_more_agents_than_gear():
    spec = parse_map("""\
name: sparse
max_steps: 20
smart_breach_steps: 6
grid:
.C......
.d......
.A...A.A
....P.p.
""")
    defenders, attackers = assign_roles(spec)
    assert list(defenders) == [0]
    assert set(attackers) == {1, 2}
    assert all(v is None for v in attackers.values()), "no arrows to hand out"


@pytest.mark.parametrize("name", ["pretrain_4a2c", "moderate_8a2c", "hard_8a3c"])
def test_expert_clears_builtin_maps(name):
    spec = get_map(name)
    env = PreyPredatorEnv(spec, EnvConfig())
    expert = ScriptedExpert(spec)
    for seed in range(10):
        rec = collect_episode(env, expert, seed=seed)
        assert rec.reason == "cleared", f"{name} seed {seed}: {rec.reason}"
        assert rec.kills == spec.n_prey


def test_expert_defender_occupies_campsite():
    spec = get_map("pretrain_4a2c")
    env = PreyPredatorEnv(spec, EnvConfig())
    expert = ScriptedExpert(spec)
    env.reset(seed=0)
    for _ in range(2):
        env.step(expert(env))
    st = env.state
    defended = {tuple(p) for p, a, it in zip(st.predator_pos, st.predator_alive, st.predator_item)
                if a and it == ITEM_TOOL}
    assert set(spec.campsites) <= defended, "both campsites manned by step 2"


def test_generate_demos_returns_stats():
    spec = get_map("pretrain_4a2c")
    records, stats = generate_demos(spec, EnvConfig(), count=5, seed=11)
    assert len(records) == 5
    assert all(r.reason == "cleared" for r in records)
    assert stats["count"] == 5
    assert stats["map"] == spec.name
    assert stats["map_hash"] == spec.content_hash
    assert stats["attempts"] >= 5
    assert stats["seed"] == 11
    assert stats["mean_return"] > 20


def test_generate_demos_fails_on_impossible_map():
    # No tools, and the team spawns too far away to intercept the runner.
    spec = parse_map("""\
name: doomed
max_steps: 30
smart_breach_steps: 4
grid:
C.........
..........
..........
..........
P.........
..........
..........
..........
.........A
.......p.a
""")
    with pytest.raises(DemoError, match="cleared only"):
        generate_demos(spec, EnvConfig(), count=4, seed=0)


def test_demo_save_load_round_trip(tmp_path):
    spec = get_map("pretrain_4a2c")
    cfg = EnvConfig()
    records, stats = generate_demos(spec, cfg, count=3, seed=2)
    save_demos(tmp_path / "demos", records, stats)
    assert (tmp_path / "demos" / "manifest.json").exists()
    assert (tmp_path / "demos" / "traces.jsonl").exists()
    loaded = load_demos(tmp_path / "demos", spec, cfg)
    assert len(loaded) == 3
    for got, want in zip(loaded, records):
        assert np.array_equal(got.rewards, want.rewards)
        assert np.array_equal(got.obs, want.obs)


def test_demo_load_rejects_wrong_map(tmp_path, tiny_spec):
    spec = get_map("pretrain_4a2c")
    cfg = EnvConfig()
    records, stats = generate_demos(spec, cfg, count=2, seed=2)
    save_demos(tmp_path / "demos", records, stats)
    with pytest.raises(DemoError, match="hash"):
        load_demos(tmp_path / "demos", tiny_spec, cfg)


def test_demo_load_rejects_env_mismatch(tmp_path):
    spec = get_map("pretrain_4a2c")
    records, stats = generate_demos(spec, EnvConfig(), count=2, seed=2)
    save_demos(tmp_path / "demos", records, stats)
    with pytest.raises(DemoError, match="env config"):
        load_demos(tmp_path / "demos", spec, EnvConfig(reward_kill=2.0))


def test_demo_load_rejects_count_mismatch(tmp_path):
    spec = get_map("pretrain_4a2c")
    cfg = EnvConfig()
    records, stats = generate_demos(spec, cfg, count=2, seed=2)
    save_demos(tmp_path / "demos", records, stats)
    manifest = json.loads((tmp_path / "demos" / "manifest.json").read_text())
    manifest["count"] = 7
    (tmp_path / "demos" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DemoError, match="manifest promises 7"):
        load_demos(tmp_path / "demos", spec, cfg)
