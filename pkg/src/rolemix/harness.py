"""Experiment orchestration: evaluation reports and multi-seed pipelines.

An experiment is demos (optional) -> phase 1 on the small map -> phase 2 on
the large map, repeated over seeds. Demos are generated once and shared by
every seed; each seed's phase 2 starts from that seed's phase 1 bundle unless
the config names an explicit bundle.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .config import (ConfigError, EvalConfig, ExperimentConfig, NetConfig,
                     TrainConfig, config_hash)
from .env import EnvConfig, PreyPredatorEnv
from .expert import generate_demos, save_demos
from .maps import MapSpec, get_map
from .mixer import DiscountLadder
from .trainer import (Learner, PhaseResult, greedy_rollouts, learner_from_bundle,
                      run_phase, summarize_rollouts)


@dataclass(frozen=True)
class EvalReport:
    map: str
    bundle: str
    seed: int
    episodes: int
    return_mean: float
    return_std: float
    breach_rate: float
    clear_rate: float
    length_mean: float
    config_hash: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_learner(bundle_path, spec: MapSpec, env_cfg: EnvConfig,
                 train: TrainConfig | None = None) -> Learner:
    """Rebuild a learner purely from a bundle's own metadata."""
    _, meta = checkpoint.load_params(bundle_path)
    mixer_meta = meta.get("mixer", {})
    net = NetConfig(
        hidden_dim=int(meta["hidden_dim"]),
        hyper_hidden=int(mixer_meta.get("hyper_hidden", 32)),
        head_hidden=int(mixer_meta.get("head_hidden", 32)),
        role_count=int(mixer_meta["role_count"]),
    )
    ladder_meta = meta["ladder"]
    ladder = DiscountLadder(tuple(float(g) for g in ladder_meta["gammas"]),
                            float(ladder_meta["gamma_team"]))
    variant = meta["variant"]
    env = PreyPredatorEnv(spec, env_cfg)
    return learner_from_bundle(bundle_path, env.obs_dim, env.state_dim, env.n_agents,
                               variant, net, train or TrainConfig(), ladder)


def evaluate(cfg: EvalConfig) -> EvalReport:
    spec = get_map(cfg.map)
    learner = load_learner(cfg.bundle, spec, cfg.env)
    records = greedy_rollouts(learner, spec, cfg.env, cfg.episodes, cfg.seed)
    summary = summarize_rollouts(records)
    return EvalReport(
        map=spec.name, bundle=str(cfg.bundle), seed=cfg.seed, episodes=cfg.episodes,
        return_mean=summary["return_mean"], return_std=summary["return_std"],
        breach_rate=summary["breach_rate"], clear_rate=summary["clear_rate"],
        length_mean=summary["length_mean"], config_hash=config_hash(cfg),
    )


@dataclass
class ExperimentResult:
    out_dir: str
    demo_dir: str | None
    phase1: dict[int, PhaseResult]
    phase2: dict[int, PhaseResult]

    def median_final(self, phase: str, key: str) -> float:
        results = self.phase1 if phase == "phase1" else self.phase2
        values = [r.final_eval()[key] for r in results.values()]
        return float(np.median(values))


def run_experiment(cfg: ExperimentConfig, out_root, log=None) -> ExperimentResult:
    out_dir = os.path.join(out_root, cfg.name)
    os.makedirs(out_dir, exist_ok=True)

    demo_dir = None
    if cfg.demo is not None:
        demo_dir = os.path.join(out_dir, "demos")
        spec = get_map(cfg.demo.map)
        records, stats = generate_demos(spec, cfg.demo.env, cfg.demo.count, cfg.demo.seed)
        save_demos(demo_dir, records, stats)

    result = ExperimentResult(out_dir=out_dir, demo_dir=demo_dir, phase1={}, phase2={})
    for seed in cfg.seeds:
        seed_dir = os.path.join(out_dir, f"seed{seed}")
        bundle_for_phase2 = None
        if cfg.phase1 is not None:
            phase1 = dataclasses.replace(cfg.phase1, seed=seed)
            if phase1.demos is None and demo_dir is not None:
                phase1 = dataclasses.replace(phase1, demos=demo_dir)
            res1 = run_phase(phase1, os.path.join(seed_dir, "phase1"), log=log)
            result.phase1[seed] = res1
            bundle_for_phase2 = res1.bundle_path
        if cfg.phase2 is not None:
            phase2 = dataclasses.replace(cfg.phase2, seed=seed)
            if phase2.init_bundle is None:
                if bundle_for_phase2 is None:
                    raise ConfigError(
                        "phase2 has no init_bundle and there is no phase1 to supply one"
                    )
                phase2 = dataclasses.replace(phase2, init_bundle=bundle_for_phase2)
            res2 = run_phase(phase2, os.path.join(seed_dir, "phase2"), log=log)
            result.phase2[seed] = res2

    summary = {"name": cfg.name, "seeds": list(cfg.seeds), "demos": demo_dir}
    for label, phases in (("phase1", result.phase1), ("phase2", result.phase2)):
        if phases:
            summary[label] = {
                str(seed): res.final_eval() for seed, res in phases.items()
            }
            summary[f"{label}_median_return"] = result.median_final(label,
                                                                    "eval_return_mean")
            summary[f"{label}_median_breach"] = result.median_final(label,
                                                                    "eval_breach_rate")
            summary[f"{label}_median_clear"] = result.median_final(label,
                                                                   "eval_clear_rate")
    with open(os.path.join(out_dir, "experiment.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result
