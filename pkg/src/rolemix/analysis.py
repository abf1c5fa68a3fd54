"""Behavioural analysis: role-weight PCA and visitation maps.

The mixer assigns every agent a distribution over K latent roles as a
function of its own observation. Collecting those K-vectors across rollout
steps and projecting them to two principal components shows whether the
learned roles split the team the way the scenario demands (campsite holders
versus hunters). Visitation maps count how often each agent stood on each
cell, the spatial counterpart of the same question.

Outputs are plain CSV with a comment header carrying the config hash and
seed, so identical commands write byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PcaConfig, VisitsConfig, config_hash
from .env import PreyPredatorEnv
from .episodes import EpisodeRecord, collect_episode, load_episodes
from .expert import ScriptedExpert
from .maps import MapSpec, get_map
from .mixer import RoleMixer
from .trainer import Learner, net_actor


@dataclass
class PCAResult:
    coords: np.ndarray      # (M, 2)
    components: np.ndarray  # (2, K)
    explained: np.ndarray   # (2,) eigenvalue fractions
    mean: np.ndarray        # (K,)


def pca_project(rows: np.ndarray) -> PCAResult:
    """Project rows onto the top two principal components.

    Uses an eigen-decomposition of the K x K covariance matrix in float64.
    Component signs are fixed by making each component's largest-magnitude
    entry positive, so the projection is deterministic.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-D row matrix, got shape {rows.shape}")
    m, k = rows.shape
    if k < 2:
        raise ValueError("need at least 2 feature dimensions")
    mean = rows.mean(axis=0) if m else np.zeros(k)
    centered = rows - mean
    if m > 1:
        cov = centered.T @ centered / (m - 1)
    else:
        cov = np.zeros((k, k))
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    components = eigvecs[:, order].T.copy()
    for c in components:
        pivot = np.argmax(np.abs(c))
        if c[pivot] < 0:
            c *= -1.0
    total = float(eigvals.sum())
    explained = (eigvals[order] / total) if total > 0 else np.zeros(2)
    coords = centered @ components.T
    return PCAResult(coords=coords, components=components,
                     explained=np.asarray(explained, dtype=np.float64), mean=mean)


def collect_role_rows(learner: Learner, spec: MapSpec, env_cfg, episodes: int,
                      seed: int, policy: str = "greedy"
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roll episodes and record each alive agent's role-weight vector per step.

    Returns (rows (M, K), agent index (M,), step index (M,)).
    """
    if not isinstance(learner.mixer, RoleMixer):
        raise ValueError("role weights only exist for the role mixer variant")
    mixer: RoleMixer = learner.mixer
    seed_rng = np.random.default_rng(seed)
    rows, agents, steps = [], [], []
    for _ in range(episodes):
        env = PreyPredatorEnv(spec, env_cfg)
        actor = (ScriptedExpert(spec) if policy == "expert"
                 else net_actor(learner, 0.0, None))
        rec = collect_episode(env, actor, int(seed_rng.integers(0, 2**63 - 1)))
        obs = rec.obs.astype(np.float32)
        for t in range(rec.length + 1):
            alive = rec.alive[t]
            if not alive.any():
                continue
            w1 = mixer.role_weights(obs[t], alive)
            for i in np.flatnonzero(alive):
                rows.append(w1[i])
                agents.append(i)
                steps.append(t)
    return np.asarray(rows), np.asarray(agents, dtype=np.int64), np.asarray(steps,
                                                                            dtype=np.int64)


def visitation_counts(records: list[EpisodeRecord], spec: MapSpec) -> np.ndarray:
    """Per-agent cell occupancy counts over all stored timesteps: (N, H, W)."""
    n = records[0].alive.shape[1]
    counts = np.zeros((n, spec.height, spec.width), dtype=np.int64)
    for rec in records:
        for t in range(rec.length + 1):
            for i in np.flatnonzero(rec.alive[t]):
                x, y = rec.pred_pos[t, i]
                counts[i, int(y), int(x)] += 1
    return counts


def write_pca_csv(path, cfg: PcaConfig, result: PCAResult, agents: np.ndarray,
                  steps: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        fh.write(f"# explained={result.explained[0]:.6f},{result.explained[1]:.6f}\n")
        fh.write("agent,t,pc1,pc2\n")
        for a, t, (p1, p2) in zip(agents, steps, result.coords):
            fh.write(f"{a},{t},{p1:.8f},{p2:.8f}\n")


def write_visits_csv(path, cfg: VisitsConfig, counts: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n")
        fh.write("agent,x,y,count\n")
        n, h, w = counts.shape
        for i in range(n):
            for y in range(h):
                for x in range(w):
                    c = counts[i, y, x]
                    if c:
                        fh.write(f"{i},{x},{y},{int(c)}\n")


def run_pca(cfg: PcaConfig, out_path) -> PCAResult:
    from .harness import load_learner

    spec = get_map(cfg.map)
    learner = load_learner(cfg.bundle, spec, cfg.env)
    rows, agents, steps = collect_role_rows(learner, spec, cfg.env, cfg.episodes,
                                            cfg.seed, cfg.policy)
    result = pca_project(rows)
    write_pca_csv(out_path, cfg, result, agents, steps)
    return result


def run_visits(cfg: VisitsConfig, out_path) -> np.ndarray:
    from .harness import load_learner

    spec = get_map(cfg.map)
    if cfg.traces is not None:
        records = load_episodes(cfg.traces, spec, cfg.env)
    else:
        learner = load_learner(cfg.bundle, spec, cfg.env)
        seed_rng = np.random.default_rng(cfg.seed)
        records = []
        for _ in range(cfg.episodes):
            env = PreyPredatorEnv(spec, cfg.env)
            records.append(collect_episode(env, net_actor(learner, 0.0, None),
                                           int(seed_rng.integers(0, 2**63 - 1))))
    counts = visitation_counts(records, spec)
    write_visits_csv(out_path, cfg, counts)
    return counts
