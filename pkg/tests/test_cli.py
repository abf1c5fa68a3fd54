import json
import subprocess
import sys

import numpy as np
import pytest

from rolemix.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from rolemix.config import NetConfig, TrainConfig
from rolemix.env import EnvConfig, PreyPredatorEnv
from rolemix.maps import get_map
from rolemix.mixer import DiscountLadder, half_count
from rolemix.trainer import Learner

SMALL_NET = NetConfig(hidden_dim=16, hyper_hidden=8, head_hidden=8, role_count=8)

NET_YAML = """\
net:
  hidden_dim: 16
  hyper_hidden: 8
  head_hidden: 8
  role_count: 8
env:
  obs_radius: 1
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def emitted(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


@pytest.fixture()
def train_yaml(mini_map_path, tmp_path):
    return write(tmp_path, "train.yaml", f"""\
map: {mini_map_path}
seed: 3
env_step_budget: 36
eval_interval: 36
eval_episodes: 2
train:
  batch_size: 2
  buffer_capacity: 32
  target_refresh: 10
{NET_YAML}""")


@pytest.fixture(scope="module")
def saved_bundle(mini_map_path, tmp_path_factory):
    env = PreyPredatorEnv(get_map(str(mini_map_path)), EnvConfig(obs_radius=1))
    learner = Learner(env.obs_dim, env.state_dim, env.n_agents, "role-mixer+lstrr",
                      SMALL_NET, TrainConfig(),
                      DiscountLadder.linear(half_count(SMALL_NET.role_count)),
                      rng=np.random.default_rng(0))
    path = tmp_path_factory.mktemp("cli_bundles") / "bundle.ckpt"
    learner.save_bundle(path)
    return path


def test_demo_gen_then_supervised_train(mini_map_path, tmp_path, capsys):
    demo_yaml = write(tmp_path, "demo.yaml", f"""\
map: {mini_map_path}
count: 2
env:
  obs_radius: 1
""")
    demo_dir = tmp_path / "demos"
    assert main(["demo-gen", "--config", demo_yaml, "--out", str(demo_dir)]) == EXIT_OK
    stats = emitted(capsys)
    assert stats["count"] == 2
    assert (demo_dir / "manifest.json").exists()
    assert (demo_dir / "traces.jsonl").exists()

    train_yaml = write(tmp_path, "train.yaml", f"""\
map: {mini_map_path}
seed: 1
env_step_budget: 36
eval_interval: 36
eval_episodes: 2
lambda_sup: 0.5
demos: {demo_dir}
train:
  batch_size: 2
  demo_batch_size: 2
  buffer_capacity: 32
  target_refresh: 10
{NET_YAML}""")
    out_dir = tmp_path / "run"
    assert main(["train", "--config", train_yaml, "--out", str(out_dir)]) == EXIT_OK
    payload = emitted(capsys)
    assert payload["out"] == str(out_dir)
    assert payload["env_steps"] <= 36
    assert (out_dir / "bundle.ckpt").exists()
    assert (out_dir / "metrics.jsonl").exists()


def test_seed_flag_overrides_config(train_yaml, tmp_path, capsys):
    out_dir = tmp_path / "seeded"
    assert main(["train", "--config", train_yaml, "--seed", "9",
                 "--out", str(out_dir)]) == EXIT_OK
    capsys.readouterr()
    with open(out_dir / "summary.json") as fh:
        assert json.load(fh)["seed"] == 9
    with open(out_dir / "config.json") as fh:
        assert json.load(fh)["seed"] == 9


def test_transfer_train_requires_init_bundle(train_yaml, tmp_path, capsys):
    assert main(["transfer-train", "--config", train_yaml,
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "init_bundle" in capsys.readouterr().err


def test_transfer_train_continues_from_bundle(mini_map_path, saved_bundle,
                                              tmp_path, capsys):
    cfg = write(tmp_path, "transfer.yaml", f"""\
map: {mini_map_path}
seed: 2
env_step_budget: 24
eval_interval: 24
eval_episodes: 1
init_bundle: {saved_bundle}
train:
  batch_size: 2
  buffer_capacity: 32
  target_refresh: 10
{NET_YAML}""")
    out_dir = tmp_path / "phase2"
    assert main(["transfer-train", "--config", cfg, "--out", str(out_dir)]) == EXIT_OK
    assert emitted(capsys)["bundle"] == str(out_dir / "bundle.ckpt")


def test_evaluate_cli_prints_and_writes(mini_map_path, saved_bundle, tmp_path, capsys):
    cfg = write(tmp_path, "eval.yaml", f"""\
bundle: {saved_bundle}
map: {mini_map_path}
episodes: 2
env:
  obs_radius: 1
""")
    assert main(["evaluate", "--config", cfg]) == EXIT_OK
    report = emitted(capsys)
    assert report["episodes"] == 2
    assert "breach_rate" in report

    out_path = tmp_path / "eval.json"
    assert main(["evaluate", "--config", cfg, "--out", str(out_path)]) == EXIT_OK
    capsys.readouterr()
    with open(out_path) as fh:
        assert json.load(fh)["episodes"] == 2


def test_analysis_verbs_write_csv(mini_map_path, saved_bundle, tmp_path, capsys):
    pca_cfg = write(tmp_path, "pca.yaml", f"""\
bundle: {saved_bundle}
map: {mini_map_path}
episodes: 2
env:
  obs_radius: 1
""")
    pca_out = tmp_path / "pca.csv"
    assert main(["analyze-pca", "--config", pca_cfg, "--out", str(pca_out)]) == EXIT_OK
    payload = emitted(capsys)
    assert payload["rows"] > 0 and len(payload["explained"]) == 2
    assert pca_out.read_text().splitlines()[2] == "agent,t,pc1,pc2"

    visits_cfg = write(tmp_path, "visits.yaml", f"""\
map: {mini_map_path}
bundle: {saved_bundle}
episodes: 2
env:
  obs_radius: 1
""")
    visits_out = tmp_path / "visits.csv"
    assert main(["analyze-visits", "--config", visits_cfg,
                 "--out", str(visits_out)]) == EXIT_OK
    assert emitted(capsys)["total"] > 0
    assert visits_out.read_text().splitlines()[1] == "agent,x,y,count"


def test_run_verb_executes_experiment(mini_map_path, tmp_path, capsys):
    cfg = write(tmp_path, "exp.yaml", f"""\
name: cli-exp
seeds: [0, 1]
phase1:
  map: {mini_map_path}
  env_step_budget: 24
  eval_interval: 24
  eval_episodes: 1
  train:
    batch_size: 2
    buffer_capacity: 32
    target_refresh: 10
  net:
    hidden_dim: 16
    hyper_hidden: 8
    head_hidden: 8
    role_count: 8
  env:
    obs_radius: 1
""")
    out_root = tmp_path / "exps"
    assert main(["run", "--config", cfg, "--seed", "5",
                 "--out", str(out_root)]) == EXIT_OK
    assert emitted(capsys)["out"] == str(out_root / "cli-exp")
    assert (out_root / "cli-exp" / "experiment.json").exists()
    assert (out_root / "cli-exp" / "seed5" / "phase1" / "bundle.ckpt").exists()
    assert not (out_root / "cli-exp" / "seed0").exists(), \
        "--seed replaces the config's seed list"


def test_relative_out_written_under_env_root(mini_map_path, saved_bundle, tmp_path,
                                             monkeypatch, capsys):
    monkeypatch.setenv("ROLEMIX_OUT", str(tmp_path))
    cfg = write(tmp_path, "eval.yaml", f"""\
bundle: {saved_bundle}
map: {mini_map_path}
episodes: 1
env:
  obs_radius: 1
""")
    assert main(["evaluate", "--config", cfg, "--out", "eval.json"]) == EXIT_OK
    capsys.readouterr()
    assert (tmp_path / "eval.json").exists()


def test_exit_codes(mini_map_path, tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err

    bad = write(tmp_path, "bad.yaml", "map: [unclosed\n")
    assert main(["train", "--config", bad]) == EXIT_CONFIG
    capsys.readouterr()

    eval_cfg = write(tmp_path, "eval.yaml", f"""\
bundle: {tmp_path / 'missing.ckpt'}
map: {mini_map_path}
env:
  obs_radius: 1
""")
    assert main(["evaluate", "--config", eval_cfg]) == EXIT_RUNTIME
    capsys.readouterr()

    assert main(["no-such-verb"]) == EXIT_CONFIG
    assert main(["train"]) == EXIT_CONFIG  # --config is required
    assert main([]) == EXIT_CONFIG
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rolemix.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "transfer-train" in proc.stdout
