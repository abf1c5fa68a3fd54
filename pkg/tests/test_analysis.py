import numpy as np
import pytest

from rolemix.analysis import (PCAResult, collect_role_rows, pca_project,
                              run_pca, run_visits, visitation_counts)
from rolemix.config import NetConfig, PcaConfig, TrainConfig, VisitsConfig
from rolemix.env import EnvConfig, PreyPredatorEnv
from rolemix.episodes import EpisodeRecord, collect_episode, write_traces
from rolemix.maps import get_map, parse_map
from rolemix.mixer import DiscountLadder, half_count
from rolemix.trainer import Learner

SMALL_NET = NetConfig(hidden_dim=16, hyper_hidden=8, head_hidden=8, role_count=8)
LADDER = DiscountLadder.linear(half_count(SMALL_NET.role_count))


def build_learner(mini_map_path, variant="role-mixer+lstrr", seed=0) -> Learner:
    env = PreyPredatorEnv(get_map(str(mini_map_path)), EnvConfig(obs_radius=1))
    return Learner(env.obs_dim, env.state_dim, env.n_agents, variant, SMALL_NET,
                   TrainConfig(), LADDER, rng=np.random.default_rng(seed))


@pytest.fixture(scope="module")
def mini_bundle(mini_map_path, tmp_path_factory):
    path = tmp_path_factory.mktemp("bundles") / "mini.ckpt"
    build_learner(mini_map_path).save_bundle(path)
    return path


# --- PCA ------------------------------------------------------------------------


def orthonormal_pair(k=6):
    v1 = np.array([3.0, 1.0, 0.0, 0.0, 1.0, 1.0])
    v1 /= np.linalg.norm(v1)
    v2 = np.array([0.0, 2.0, 1.0, -1.0, 0.0, 1.0])
    v2 -= v1 * (v1 @ v2)
    v2 /= np.linalg.norm(v2)
    return v1[:k], v2[:k]


def test_pca_recovers_planted_plane():
    rng = np.random.default_rng(0)
    v1, v2 = orthonormal_pair()
    # Centre the coefficients and remove their empirical correlation, so the
    # sample covariance is exactly diagonal in the planted basis and the
    # principal axes are v1 and v2 themselves, not a rotation inside the plane.
    a = rng.standard_normal(400) * 5.0
    b = rng.standard_normal(400) * 1.0
    a -= a.mean()
    b -= b.mean()
    b -= a * (a @ b) / (a @ a)
    rows = 0.3 + a[:, None] * v1 + b[:, None] * v2
    result = pca_project(rows)

    assert result.coords.shape == (400, 2)
    assert result.components.shape == (2, 6)
    assert result.explained[0] > result.explained[1] > 0.0
    assert result.explained.sum() == pytest.approx(1.0, abs=1e-9)

    # Components recover the planted axes, up to the sign convention.
    for want, got in ((v1, result.components[0]), (v2, result.components[1])):
        assert abs(float(want @ got)) == pytest.approx(1.0, abs=1e-9)
    # Projected coordinates reproduce the planted coefficients up to sign.
    s1 = np.sign(result.components[0] @ v1)
    s2 = np.sign(result.components[1] @ v2)
    assert np.allclose(result.coords[:, 0], s1 * a, atol=1e-8)
    assert np.allclose(result.coords[:, 1], s2 * b, atol=1e-8)


def test_pca_sign_convention_pins_orientation():
    rng = np.random.default_rng(1)
    spread = rng.standard_normal(100)
    direction = np.array([-0.9, 0.1, 0.4])
    direction /= np.linalg.norm(direction)
    rows = spread[:, None] * direction
    result = pca_project(rows)
    pivot = np.argmax(np.abs(result.components[0]))
    assert result.components[0][pivot] > 0
    again = pca_project(rows)
    assert np.array_equal(result.coords, again.coords)
    assert np.array_equal(result.components, again.components)


def test_pca_zero_variance_input():
    rows = np.tile([1.0, 2.0, 3.0], (8, 1))
    result = pca_project(rows)
    assert np.allclose(result.coords, 0.0)
    assert np.allclose(result.explained, 0.0)
    assert np.allclose(result.mean, [1.0, 2.0, 3.0])


def test_pca_single_row():
    result = pca_project(np.array([[4.0, 5.0]]))
    assert np.allclose(result.coords, 0.0)
    assert np.allclose(result.explained, 0.0)


def test_pca_input_validation():
    with pytest.raises(ValueError, match="2-D row matrix"):
        pca_project(np.zeros(5))
    with pytest.raises(ValueError, match="at least 2 feature"):
        pca_project(np.zeros((4, 1)))


# --- role rows ----------------------------------------------------------------------


def test_collect_role_rows_structure(mini_map_path):
    learner = build_learner(mini_map_path, seed=3)
    spec = get_map(str(mini_map_path))
    rows, agents, steps = collect_role_rows(learner, spec, EnvConfig(obs_radius=1),
                                            episodes=2, seed=5)
    assert rows.shape[0] == agents.shape[0] == steps.shape[0] > 0
    assert rows.shape[1] == SMALL_NET.role_count
    assert np.all((rows >= 0.0) & (rows <= 1.0))
    assert set(np.unique(agents)) <= {0, 1}
    assert steps.min() >= 0
    again, _, _ = collect_role_rows(learner, spec, EnvConfig(obs_radius=1),
                                    episodes=2, seed=5)
    assert np.array_equal(rows, again)


def test_collect_role_rows_rejects_qmix(mini_map_path):
    learner = build_learner(mini_map_path, variant="qmix-baseline")
    spec = get_map(str(mini_map_path))
    with pytest.raises(ValueError, match="role mixer variant"):
        collect_role_rows(learner, spec, EnvConfig(obs_radius=1), 1, 0)


# --- visitation --------------------------------------------------------------------


def fake_record(spec, alive, pos):
    length = alive.shape[0] - 1
    n = alive.shape[1]
    return EpisodeRecord(
        map_name=spec.name, map_hash=spec.content_hash, seed=0, n_prey=2,
        obs=np.zeros((length + 1, n, 4), dtype=np.uint8),
        state=np.zeros((length + 1, 3), dtype=np.float32),
        avail=np.ones((length + 1, n, 7), dtype=bool),
        alive=alive, pred_pos=pos,
        actions=np.zeros((length, n), dtype=np.int8),
        rewards=np.zeros(length, dtype=np.float32),
        reason="timeout", kills=0)


def test_visitation_counts_by_hand():
    spec = parse_map("name: v\nmax_steps: 5\ngrid:\nA.p\n...\n", name="v")
    alive = np.array([[True, True], [True, True], [True, False]])
    pos = np.array([[[0, 0], [2, 1]],
                    [[0, 0], [2, 1]],
                    [[1, 0], [2, 1]]], dtype=np.int16)
    counts = visitation_counts([fake_record(spec, alive, pos)], spec)
    assert counts.shape == (2, 2, 3)  # (agents, height, width)
    assert counts[0, 0, 0] == 2
    assert counts[0, 0, 1] == 1
    assert counts[1, 1, 2] == 2, "dead step must not count"
    assert counts.sum() == 5


# --- end-to-end CSV tools -------------------------------------------------------------


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def test_run_pca_writes_deterministic_csv(mini_map_path, mini_bundle, tmp_path):
    cfg = PcaConfig(bundle=str(mini_bundle), map=str(mini_map_path), episodes=2,
                    seed=9, env=EnvConfig(obs_radius=1))
    out = tmp_path / "pca.csv"
    result = run_pca(cfg, out)
    assert isinstance(result, PCAResult)
    lines = read_lines(out)
    assert lines[0].startswith("# config_hash=") and lines[0].endswith("seed=9")
    assert lines[1].startswith("# explained=")
    assert lines[2] == "agent,t,pc1,pc2"
    assert len(lines) > 3
    agent, t, p1, p2 = lines[3].split(",")
    int(agent), int(t), float(p1), float(p2)

    out2 = tmp_path / "pca2.csv"
    run_pca(cfg, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_run_pca_expert_policy(mini_map_path, mini_bundle, tmp_path):
    cfg = PcaConfig(bundle=str(mini_bundle), map=str(mini_map_path), episodes=1,
                    seed=2, policy="expert", env=EnvConfig(obs_radius=1))
    run_pca(cfg, tmp_path / "pca.csv")
    assert (tmp_path / "pca.csv").exists()


def test_run_visits_from_bundle(mini_map_path, mini_bundle, tmp_path):
    cfg = VisitsConfig(map=str(mini_map_path), bundle=str(mini_bundle), episodes=3,
                       seed=4, env=EnvConfig(obs_radius=1))
    out = tmp_path / "visits.csv"
    counts = run_visits(cfg, out)
    assert counts.shape[0] == 2
    lines = read_lines(out)
    assert lines[0].startswith("# config_hash=") and lines[0].endswith("seed=4")
    assert lines[1] == "agent,x,y,count"
    body = [line.split(",") for line in lines[2:]]
    assert sum(int(c) for _, _, _, c in body) == counts.sum()
    for a, x, y, c in body:
        assert counts[int(a), int(y), int(x)] == int(c)

    out2 = tmp_path / "visits2.csv"
    run_visits(cfg, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_run_visits_from_traces(mini_map_path, tmp_path):
    spec = get_map(str(mini_map_path))
    env_cfg = EnvConfig(obs_radius=1)
    rng = np.random.default_rng(0)

    def drift(env, obs, avail):
        actions = np.full(env.n_agents, -1, dtype=np.int64)
        for i in range(env.n_agents):
            if env.state.predator_alive[i]:
                opts = np.flatnonzero(avail[i, :5])
                actions[i] = int(opts[rng.integers(len(opts))])
        return actions

    records = [collect_episode(PreyPredatorEnv(spec, env_cfg), drift, s)
               for s in (1, 2)]
    trace_path = tmp_path / "traces.jsonl"
    write_traces(trace_path, records)

    cfg = VisitsConfig(map=str(mini_map_path), traces=str(trace_path),
                       env=env_cfg)
    counts = run_visits(cfg, tmp_path / "visits.csv")
    want = visitation_counts(records, spec)
    assert np.array_equal(counts, want)
