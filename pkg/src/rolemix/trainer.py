"""Joint training loop: TD learning + demonstrations + horizon regulariser.

The learner holds one shared recurrent agent network and one mixing network,
plus frozen target copies refreshed every ``target_refresh`` gradient steps.
A gradient step minimises

    L = L_TD + lambda_sup * L_sup + lambda_lstrr * R,

where L_TD is the squared error of the mixed team value against a one-step
bootstrapped target (greedy actions from the online network, values from the
target network), L_sup is the negative log-likelihood of demonstrated actions
under a softmax over available-action q-values, and R regresses the short
half of the role values onto per-discount Monte-Carlo return tails.

Sampling, exploration and initialisation all draw from independent streams
spawned from the phase seed, so a run is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .config import (ConfigError, LadderConfig, NetConfig, PhaseConfig,
                     TrainConfig, config_hash, dump_config)
from .env import N_ACTIONS, EnvConfig, PreyPredatorEnv
from .episodes import EpisodeRecord, collect_episode
from .expert import load_demos
from .maps import MapSpec, get_map
from .mixer import (DiscountLadder, RoleMixer, StateMixer, discounted_tails,
                    half_count)
from .policy import AgentNet, anneal_eps, select_actions

AVAIL_BIAS = -1e9
BUNDLE_VERSION = 1


class TransferError(RuntimeError):
    """Raised when a parameter bundle cannot be loaded into the requested setup."""


def build_ladder(cfg: LadderConfig, role_count: int) -> DiscountLadder:
    return DiscountLadder.linear(half_count(role_count), cfg.gamma_hi, cfg.gamma_lo,
                                 cfg.gamma_team)


# ---------------------------------------------------------------------------
# Batching


@dataclass
class EpisodeBatch:
    """Time-major padded arrays for a batch of episodes.

    Shapes use B episodes, padded length L (so L+1 stored timesteps), N
    agents. Padded timesteps have alive = False, avail all-False and zero
    rewards; `mask` marks real transitions.
    """

    obs: np.ndarray        # (B, L+1, N, D) float32
    state: np.ndarray      # (B, L+1, S) float32
    avail: np.ndarray      # (B, L+1, N, A) bool
    alive: np.ndarray      # (B, L+1, N) bool
    alive_f: np.ndarray    # (B, L+1, N) float32
    actions: np.ndarray    # (B, L, N) int64, dead/padded clipped to 0
    rewards: np.ndarray    # (B, L) float32
    mask: np.ndarray       # (B, L) float32
    terminal: np.ndarray   # (B, L) float32
    tails: np.ndarray | None  # (B, L, K2) float32
    mc: np.ndarray | None     # (B, L) float32

    @classmethod
    def from_records(cls, records: list[EpisodeRecord], gammas=None,
                     gamma_team: float = 0.99, monte_carlo: bool = False,
                     dtype=np.float32) -> "EpisodeBatch":
        if not records:
            raise ValueError("cannot batch zero episodes")
        b = len(records)
        length = max(r.length for r in records)
        _, n, d = records[0].obs.shape
        s = records[0].state.shape[1]
        a = records[0].avail.shape[2]
        obs = np.zeros((b, length + 1, n, d), dtype=dtype)
        state = np.zeros((b, length + 1, s), dtype=dtype)
        avail = np.zeros((b, length + 1, n, a), dtype=bool)
        alive = np.zeros((b, length + 1, n), dtype=bool)
        actions = np.zeros((b, length, n), dtype=np.int64)
        rewards = np.zeros((b, length), dtype=dtype)
        mask = np.zeros((b, length), dtype=dtype)
        terminal = np.zeros((b, length), dtype=dtype)
        k2 = len(gammas) if gammas is not None else 0
        tails = np.zeros((b, length, k2), dtype=dtype) if k2 else None
        mc = np.zeros((b, length), dtype=dtype) if monte_carlo else None
        for i, rec in enumerate(records):
            li = rec.length
            obs[i, :li + 1] = rec.obs
            state[i, :li + 1] = rec.state
            avail[i, :li + 1] = rec.avail
            alive[i, :li + 1] = rec.alive
            actions[i, :li] = np.maximum(rec.actions, 0)
            rewards[i, :li] = rec.rewards
            mask[i, :li] = 1.0
            # Episodes end for a real reason (breach, cleared, or the fixed
            # horizon, which the networks can see through t/T in the state),
            # so the last transition never bootstraps.
            terminal[i, li - 1] = 1.0
            if tails is not None:
                tails[i, :li] = discounted_tails(rec.rewards, gammas)
            if mc is not None:
                mc[i, :li] = discounted_tails(rec.rewards, [gamma_team])[:, 0]
        return cls(obs=obs, state=state, avail=avail, alive=alive,
                   alive_f=alive.astype(dtype), actions=actions, rewards=rewards,
                   mask=mask, terminal=terminal, tails=tails, mc=mc)


class ReplayBuffer:
    """Fixed-capacity episode ring; uniform sampling without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[EpisodeRecord] = []
        self._next = 0

    def add(self, rec: EpisodeRecord) -> None:
        if len(self._items) < self.capacity:
            self._items.append(rec)
        else:
            self._items[self._next] = rec
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, k: int) -> list[EpisodeRecord]:
        if k > len(self._items):
            raise ValueError(f"asked for {k} episodes, buffer holds {len(self._items)}")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


# ---------------------------------------------------------------------------
# Optimiser


class RMSProp:
    """RMSprop without momentum, with global-norm clipping and a non-finite
    gradient guard (the update is skipped rather than poisoning the weights)."""

    def __init__(self, params: list[ad.Tensor], lr: float = 5e-4, alpha: float = 0.99,
                 eps: float = 1e-5, clip_norm: float = 10.0):
        self.params = list(params)
        self.lr, self.alpha, self.eps, self.clip_norm = lr, alpha, eps, clip_norm
        self.sq_avg = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            g = p.grad
            total += float((g.astype(np.float64) ** 2).sum())
        return float(np.sqrt(total))

    def step(self) -> bool:
        norm = self.grad_norm()
        if not np.isfinite(norm):
            return False
        scale = 1.0 if norm <= self.clip_norm else self.clip_norm / max(norm, 1e-12)
        for p, sq in zip(self.params, self.sq_avg):
            g = p.grad * p.data.dtype.type(scale)
            sq *= self.alpha
            sq += (1.0 - self.alpha) * g * g
            p.data -= self.lr * g / (np.sqrt(sq) + self.eps)
        return True


# ---------------------------------------------------------------------------
# Learner


class Learner:
    def __init__(self, obs_dim: int, state_dim: int, n_agents: int, variant: str,
                 net: NetConfig, train: TrainConfig, ladder: DiscountLadder,
                 rng: np.random.Generator | None = None, dtype=None):
        self.dtype = np.dtype(dtype or ad.DEFAULT_DTYPE)
        self.obs_dim, self.state_dim, self.n_agents = obs_dim, state_dim, n_agents
        self.variant = variant
        self.net_cfg, self.train_cfg = net, train
        self.ladder = ladder
        self.k2 = half_count(net.role_count)
        if rng is None:
            rng = np.random.default_rng(0)

        self.agent = AgentNet(obs_dim, net.hidden_dim, N_ACTIONS, rng, self.dtype)
        self.mixer = self._build_mixer(rng)
        self.target_agent = AgentNet(obs_dim, net.hidden_dim, N_ACTIONS,
                                     np.random.default_rng(0), self.dtype)
        self.target_mixer = self._build_mixer(np.random.default_rng(0))
        self.refresh_targets()

        self.named_params: dict[str, ad.Tensor] = {}
        for k, v in self.agent.params.items():
            self.named_params[f"agent.{k}"] = v
        for k, v in self.mixer.params.items():
            self.named_params[f"mixer.{k}"] = v
        self.opt = RMSProp(list(self.named_params.values()), train.lr, train.rms_alpha,
                           train.rms_eps, train.grad_clip)
        self.grad_steps = 0
        self.skipped_updates = 0

    def _build_mixer(self, rng):
        net = self.net_cfg
        if self.variant == "qmix-baseline":
            return StateMixer(self.n_agents, self.state_dim, net.role_count,
                              net.head_hidden, rng, self.dtype)
        return RoleMixer(self.obs_dim, self.state_dim, net.role_count,
                         net.hyper_hidden, net.head_hidden, rng, self.dtype)

    def refresh_targets(self) -> None:
        self.target_agent.load_state_dict(self.agent.state_dict())
        self.target_mixer.load_state_dict(self.mixer.state_dict())

    # -- acting ---------------------------------------------------------------

    def act(self, obs: np.ndarray, avail: np.ndarray, alive: np.ndarray,
            hidden: np.ndarray, eps: float,
            rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
        q, h_new = self.agent.q_values(obs.astype(self.dtype, copy=False), hidden)
        return select_actions(q, avail, alive, eps, rng), h_new

    # -- losses -----------------------------------------------------------------

    def _sweep(self, agent: AgentNet, obs: np.ndarray, alive_f: np.ndarray):
        """Run the recurrent net over a whole padded batch.

        Returns per-timestep q tensors (B*N, A) and the observation constants
        (reused by the mixer). Hidden states of dead agents are frozen.
        """
        b, l1, n, d = obs.shape
        h_dim = agent.hidden_dim
        h = ad.constant(agent.init_hidden(b * n))
        qs, obs_ts = [], []
        for t in range(l1):
            o = ad.constant(obs[:, t].reshape(b * n, d))
            q, h_new = agent.step(o, h)
            row_alive = alive_f[:, t].reshape(b * n, 1)
            if row_alive.all():
                h = h_new
            else:
                gate = np.broadcast_to(row_alive, (b * n, h_dim)).astype(self.dtype)
                h = ad.add(ad.mul(h_new, ad.constant(gate)),
                           ad.mul(h, ad.constant(1.0 - gate)))
            qs.append(q)
            obs_ts.append(o)
        return qs, obs_ts

    def td_targets(self, batch: EpisodeBatch, online_qs: list[ad.Tensor]) -> np.ndarray:
        """Bootstrapped targets with double estimation, or pure MC returns."""
        if self.train_cfg.monte_carlo_targets:
            return batch.mc
        b, l1, n, _ = batch.obs.shape
        with ad.no_grad():
            tqs, tobs = self._sweep(self.target_agent, batch.obs, batch.alive_f)
            boot = np.zeros((b, l1), dtype=np.float64)
            for t in range(1, l1):
                q_online = online_qs[t].data.reshape(b, n, N_ACTIONS)
                masked = np.where(batch.avail[:, t], q_online, -np.inf)
                greedy = masked.argmax(axis=-1)
                q_target = tqs[t].data.reshape(b, n, N_ACTIONS)
                chosen = np.take_along_axis(q_target, greedy[..., None], -1)[..., 0]
                obs3 = ad.reshape(tobs[t], (b, n, self.obs_dim))
                q_tot, _ = self.target_mixer.mix(
                    obs3, ad.constant(chosen.astype(self.dtype)),
                    ad.constant(batch.state[:, t]), batch.alive[:, t])
                boot[:, t] = q_tot.data[:, 0]
        gamma = self.ladder.gamma_team
        targets = batch.rewards + gamma * (1.0 - batch.terminal) * boot[:, 1:]
        return targets.astype(self.dtype)

    def losses(self, batch: EpisodeBatch, demo_batch: EpisodeBatch | None,
               lambda_sup: float, lambda_lstrr: float):
        """Build the joint loss graph; returns (total, parts dict of floats)."""
        if lambda_lstrr > 0 and batch.tails is None:
            raise ValueError("batch was assembled without return tails")
        if lambda_sup > 0 and demo_batch is None:
            raise ValueError("lambda_sup > 0 needs a demo batch")
        b, l1, n, d = batch.obs.shape
        steps = l1 - 1
        qs, obs_ts = self._sweep(self.agent, batch.obs, batch.alive_f)
        targets = self.td_targets(batch, qs)
        mask_sum = float(batch.mask.sum())

        acc_td = None
        acc_ls = None
        for t in range(steps):
            obs3 = ad.reshape(obs_ts[t], (b, n, d))
            q_sel = ad.reshape(ad.take(qs[t], batch.actions[:, t].reshape(-1)), (b, n))
            q_tot, q_star = self.mixer.mix(obs3, q_sel,
                                           ad.constant(batch.state[:, t]),
                                           batch.alive[:, t])
            diff = ad.sub(ad.reshape(q_tot, (b,)), ad.constant(targets[:, t]))
            err = ad.mul(ad.mul(diff, diff), ad.constant(batch.mask[:, t]))
            term = ad.reduce_sum(err)
            acc_td = term if acc_td is None else ad.add(acc_td, term)
            if lambda_lstrr > 0:
                short = ad.slice_axis(q_star, 1, 0, self.k2)
                diff_r = ad.sub(short, ad.constant(batch.tails[:, t]))
                step_mask = np.broadcast_to(batch.mask[:, t][:, None],
                                            (b, self.k2)).astype(self.dtype)
                pen = ad.reduce_sum(ad.mul(ad.mul(diff_r, diff_r), ad.constant(step_mask)))
                acc_ls = pen if acc_ls is None else ad.add(acc_ls, pen)

        td = ad.affine(acc_td, 1.0 / mask_sum, 0.0)
        total = td
        parts = {"td": float(td.data)}
        if lambda_lstrr > 0:
            lstrr = ad.affine(acc_ls, 1.0 / (self.k2 * mask_sum), 0.0)
            parts["lstrr"] = float(lstrr.data)
            total = ad.add(total, ad.affine(lstrr, lambda_lstrr, 0.0))
        else:
            parts["lstrr"] = 0.0
        if lambda_sup > 0:
            sup = self.sup_loss(demo_batch)
            parts["sup"] = float(sup.data)
            total = ad.add(total, ad.affine(sup, lambda_sup, 0.0))
        else:
            parts["sup"] = 0.0
        parts["total"] = float(total.data)
        return total, parts

    def sup_loss(self, demo_batch: EpisodeBatch) -> ad.Tensor:
        """Mean NLL of demonstrated actions under the masked action softmax."""
        b, l1, n, _ = demo_batch.obs.shape
        qs, _ = self._sweep(self.agent, demo_batch.obs, demo_batch.alive_f)
        # Gate by the step mask as well as liveness: an episode's terminal
        # index sits inside the padded range with alive survivors but no
        # recorded action.
        valid_all = demo_batch.alive_f[:, :-1] * demo_batch.mask[:, :, None]
        count = float(valid_all.sum())
        acc = None
        for t in range(l1 - 1):
            bias = np.where(demo_batch.avail[:, t].reshape(b * n, N_ACTIONS),
                            0.0, AVAIL_BIAS).astype(self.dtype)
            logp = ad.log_softmax(ad.add(qs[t], ad.constant(bias)), axis=-1)
            chosen = ad.take(logp, demo_batch.actions[:, t].reshape(-1))
            valid = valid_all[:, t].reshape(-1)
            term = ad.reduce_sum(ad.mul(chosen, ad.constant(valid)))
            acc = term if acc is None else ad.add(acc, term)
        return ad.affine(acc, -1.0 / max(count, 1.0), 0.0)

    def grad_step(self, batch: EpisodeBatch, demo_batch: EpisodeBatch | None,
                  lambda_sup: float, lambda_lstrr: float) -> dict:
        ad.zero_grads(self.named_params.values())
        total, parts = self.losses(batch, demo_batch, lambda_sup, lambda_lstrr)
        total.backward()
        applied = self.opt.step()
        if not applied:
            self.skipped_updates += 1
        parts["applied"] = applied
        self.grad_steps += 1
        if self.grad_steps % self.train_cfg.target_refresh == 0:
            self.refresh_targets()
        return parts

    # -- persistence ---------------------------------------------------------

    def bundle_meta(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION,
            "variant": self.variant,
            "obs_dim": self.obs_dim,
            "state_dim": self.state_dim,
            "hidden_dim": self.net_cfg.hidden_dim,
            "n_actions": N_ACTIONS,
            "mixer": self.mixer.meta(),
            "ladder": {"gammas": list(self.ladder.gammas),
                       "gamma_team": self.ladder.gamma_team},
        }

    def save_bundle(self, path, extra_meta: dict | None = None) -> None:
        params = {f"agent.{k}": v for k, v in self.agent.state_dict().items()}
        params.update({f"mixer.{k}": v for k, v in self.mixer.state_dict().items()})
        meta = self.bundle_meta()
        if extra_meta:
            meta.update(extra_meta)
        checkpoint.save_params(path, params, meta)


# Mixer parameters that depend only on per-agent observations; these transfer
# across team sizes unconditionally. State heads transfer only when the
# global summary layout matches, otherwise they are freshly initialised.
ROLE_CORE_PARAMS = ("u1", "u2")


def learner_from_bundle(bundle_path, obs_dim: int, state_dim: int, n_agents: int,
                        variant: str, net: NetConfig, train: TrainConfig,
                        ladder: DiscountLadder, rng: np.random.Generator | None = None,
                        dtype=None) -> Learner:
    """Build a learner for a (possibly different-size) team from a saved bundle."""
    try:
        params, meta = checkpoint.load_params(bundle_path)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise TransferError(f"cannot read bundle {bundle_path!r}: {exc}") from exc
    if meta.get("bundle_version") != BUNDLE_VERSION:
        raise TransferError(f"unsupported bundle version {meta.get('bundle_version')!r}")
    mixer_meta = meta.get("mixer", {})
    want_kind = "state" if variant == "qmix-baseline" else "role"
    if mixer_meta.get("kind") != want_kind:
        raise TransferError(
            f"bundle holds a {mixer_meta.get('kind')!r}-mixer model, run is "
            f"configured for {variant!r}"
        )
    checks = [
        ("obs_dim", meta.get("obs_dim"), obs_dim),
        ("hidden_dim", meta.get("hidden_dim"), net.hidden_dim),
        ("n_actions", meta.get("n_actions"), N_ACTIONS),
        ("role_count", mixer_meta.get("role_count"), net.role_count),
    ]
    if variant != "qmix-baseline":
        checks.append(("hyper_hidden", mixer_meta.get("hyper_hidden"), net.hyper_hidden))
    for name, got, want in checks:
        if got != want:
            raise TransferError(f"bundle {name} is {got}, run needs {want}")
    if variant == "qmix-baseline" and mixer_meta.get("n_agents") != n_agents:
        raise TransferError(
            f"qmix-baseline mixer weights are tied to a {mixer_meta.get('n_agents')}-agent "
            f"team and cannot mix {n_agents} agents"
        )

    learner = Learner(obs_dim, state_dim, n_agents, variant, net, train, ladder,
                      rng=rng, dtype=dtype)
    agent_arrays = {}
    for k in learner.agent.params:
        full = f"agent.{k}"
        if full not in params:
            raise TransferError(f"bundle is missing required parameter {full!r}")
        agent_arrays[k] = params[full]
    learner.agent.load_state_dict(agent_arrays)

    state_heads_ok = meta.get("state_dim") == state_dim
    for k, tensor in learner.mixer.params.items():
        full = f"mixer.{k}"
        core = variant == "qmix-baseline" or k in ROLE_CORE_PARAMS
        if core and full not in params:
            raise TransferError(f"bundle is missing required parameter {full!r}")
        if not core and not state_heads_ok:
            continue  # keep the fresh initialisation
        if full in params:
            arr = params[full]
            if arr.shape != tensor.data.shape:
                raise TransferError(
                    f"bundle parameter {full!r} has shape {arr.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data = arr.astype(learner.dtype)
    learner.refresh_targets()
    return learner


# ---------------------------------------------------------------------------
# Evaluation and the phase loop


def greedy_rollouts(learner: Learner, spec: MapSpec, env_cfg: EnvConfig,
                    episodes: int, seed: int) -> list[EpisodeRecord]:
    seed_rng = np.random.default_rng(seed)
    records = []
    for _ in range(episodes):
        env = PreyPredatorEnv(spec, env_cfg)
        records.append(collect_episode(env, net_actor(learner, 0.0, None),
                                       int(seed_rng.integers(0, 2**63 - 1))))
    return records


def summarize_rollouts(records: list[EpisodeRecord]) -> dict:
    returns = np.array([r.episode_return for r in records], dtype=np.float64)
    return {
        "episodes": len(records),
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std()),
        "breach_rate": float(np.mean([r.breached for r in records])),
        "clear_rate": float(np.mean([r.cleared_fraction for r in records])),
        "length_mean": float(np.mean([r.length for r in records])),
    }


def net_actor(learner: Learner, eps: float, rng):
    hidden = {"h": None}

    def act(env: PreyPredatorEnv, obs, avail):
        if env.state.t == 0 or hidden["h"] is None:
            hidden["h"] = learner.agent.init_hidden(env.n_agents)
        alive = env.state.predator_alive
        actions, hidden["h"] = learner.act(obs, avail, alive, hidden["h"], eps, rng)
        return actions

    return act


@dataclass
class PhaseResult:
    out_dir: str
    bundle_path: str
    metrics_path: str
    history: list[dict] = field(default_factory=list)
    env_steps: int = 0
    episodes: int = 0
    grad_steps: int = 0
    stopped_early: bool = False

    def final_eval(self) -> dict:
        return self.history[-1]

    def first_crossing(self, key: str, threshold: float, below: bool = True) -> int | None:
        """env_steps of the first eval meeting the threshold, None if never."""
        for row in self.history:
            value = row[key]
            if (value <= threshold) if below else (value >= threshold):
                return row["env_steps"]
        return None


def run_phase(phase: PhaseConfig, out_dir: str, log=None) -> PhaseResult:
    """Train one phase to its budget (or early stop) and persist the artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    spec = get_map(phase.map)
    env = PreyPredatorEnv(spec, phase.env)
    ladder = build_ladder(phase.ladder, phase.net.role_count)
    cfg_hash = config_hash(phase)
    dump_config(phase, os.path.join(out_dir, "config.json"))

    seed_seq = np.random.SeedSequence(phase.seed)
    init_ss, explore_ss, sample_ss, rollout_ss, eval_ss = seed_seq.spawn(5)
    explore_rng = np.random.default_rng(explore_ss)
    sample_rng = np.random.default_rng(sample_ss)
    rollout_rng = np.random.default_rng(rollout_ss)
    eval_rng = np.random.default_rng(eval_ss)

    if phase.init_bundle:
        learner = learner_from_bundle(
            phase.init_bundle, env.obs_dim, env.state_dim, env.n_agents,
            phase.variant, phase.net, phase.train, ladder,
            rng=np.random.default_rng(init_ss))
    else:
        learner = Learner(env.obs_dim, env.state_dim, env.n_agents, phase.variant,
                          phase.net, phase.train, ladder,
                          rng=np.random.default_rng(init_ss))

    demos = []
    if phase.demos:
        demos = load_demos(phase.demos, spec, phase.env)
    if phase.lambda_sup > 0 and not demos:
        raise ConfigError("lambda_sup > 0 but the demo directory is empty")

    buffer = ReplayBuffer(phase.train.buffer_capacity)
    for rec in demos:
        buffer.add(rec)

    gammas = ladder.gammas if phase.lambda_lstrr > 0 else None
    use_mc = phase.train.monte_carlo_targets

    def make_batch(records):
        return EpisodeBatch.from_records(records, gammas, ladder.gamma_team,
                                         use_mc, learner.dtype)

    def one_grad_step():
        k = min(phase.train.batch_size, len(buffer))
        batch = make_batch(buffer.sample(sample_rng, k))
        demo_batch = None
        if phase.lambda_sup > 0:
            kd = min(phase.train.demo_batch_size, len(demos))
            idx = sample_rng.choice(len(demos), size=kd, replace=False)
            demo_batch = make_batch([demos[int(i)] for i in idx])
        return learner.grad_step(batch, demo_batch, phase.lambda_sup, phase.lambda_lstrr)

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    result = PhaseResult(out_dir=out_dir,
                         bundle_path=os.path.join(out_dir, "bundle.ckpt"),
                         metrics_path=metrics_path)
    env_steps = 0
    episodes = 0
    loss_sums: dict[str, float] = {}
    loss_count = 0

    metrics_fh = open(metrics_path, "w", encoding="utf-8")

    def note(msg):
        if log:
            print(msg, file=sys.stderr)

    def eval_and_log(at_steps: int, epsilon: float) -> dict:
        nonlocal loss_sums, loss_count
        rollouts = greedy_rollouts(learner, spec, phase.env, phase.eval_episodes,
                                   int(eval_rng.integers(0, 2**63 - 1)))
        summary = summarize_rollouts(rollouts)
        row = {
            "env_steps": at_steps,
            "episodes": episodes,
            "grad_steps": learner.grad_steps,
            "skipped_updates": learner.skipped_updates,
            "epsilon": epsilon,
            "loss_td": loss_sums.get("td", 0.0) / loss_count if loss_count else None,
            "loss_sup": loss_sums.get("sup", 0.0) / loss_count if loss_count else None,
            "loss_lstrr": loss_sums.get("lstrr", 0.0) / loss_count if loss_count else None,
            "eval_return_mean": summary["return_mean"],
            "eval_return_std": summary["return_std"],
            "eval_breach_rate": summary["breach_rate"],
            "eval_clear_rate": summary["clear_rate"],
            "eval_length_mean": summary["length_mean"],
            "config_hash": cfg_hash,
            "seed": phase.seed,
        }
        metrics_fh.write(json.dumps(row, sort_keys=True) + "\n")
        metrics_fh.flush()
        result.history.append(row)
        loss_sums, loss_count = {}, 0
        note(f"[{spec.name}/seed{phase.seed}] steps={at_steps} "
             f"return={summary['return_mean']:.2f} breach={summary['breach_rate']:.2f} "
             f"clear={summary['clear_rate']:.2f}")
        return row

    def track(parts):
        nonlocal loss_count
        for k in ("td", "sup", "lstrr", "total"):
            loss_sums[k] = loss_sums.get(k, 0.0) + parts[k]
        loss_count += 1

    def should_stop(row) -> bool:
        if phase.early_stop_breach is None and phase.early_stop_clear is None:
            return False
        if phase.early_stop_breach is not None and \
                row["eval_breach_rate"] > phase.early_stop_breach:
            return False
        if phase.early_stop_clear is not None and \
                row["eval_clear_rate"] < phase.early_stop_clear:
            return False
        return True

    try:
        if len(buffer) and phase.train.warmup_grad_steps:
            for _ in range(phase.train.warmup_grad_steps):
                track(one_grad_step())
        row = eval_and_log(0, anneal_eps(0, phase.eps_start, phase.eps_end,
                                         phase.eps_horizon))
        stopped = should_stop(row)
        next_eval = phase.eval_interval
        grad_budget = 0.0
        last_eval_steps = 0
        while not stopped and env_steps + spec.max_steps <= phase.env_step_budget:
            eps = anneal_eps(env_steps, phase.eps_start, phase.eps_end, phase.eps_horizon)
            rec = collect_episode(env, net_actor(learner, eps, explore_rng),
                                  int(rollout_rng.integers(0, 2**63 - 1)))
            buffer.add(rec)
            env_steps += rec.length
            episodes += 1
            result.env_steps, result.episodes = env_steps, episodes
            grad_budget += phase.train.grad_steps_per_episode
            while grad_budget >= 1.0 and len(buffer):
                track(one_grad_step())
                grad_budget -= 1.0
            if env_steps >= next_eval:
                eps_now = anneal_eps(env_steps, phase.eps_start, phase.eps_end,
                                     phase.eps_horizon)
                row = eval_and_log(env_steps, eps_now)
                last_eval_steps = env_steps
                next_eval = (env_steps // phase.eval_interval + 1) * phase.eval_interval
                stopped = should_stop(row)
        if last_eval_steps != env_steps:
            eps_now = anneal_eps(env_steps, phase.eps_start, phase.eps_end,
                                 phase.eps_horizon)
            row = eval_and_log(env_steps, eps_now)
            stopped = stopped or should_stop(row)
    finally:
        metrics_fh.close()

    result.env_steps = env_steps
    result.episodes = episodes
    result.grad_steps = learner.grad_steps
    result.stopped_early = bool(stopped) and env_steps + spec.max_steps <= phase.env_step_budget
    learner.save_bundle(result.bundle_path, extra_meta={
        "map": spec.name, "map_hash": spec.content_hash,
        "config_hash": cfg_hash, "seed": phase.seed,
        "trained_env_steps": env_steps,
    })
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "env_steps": env_steps, "episodes": episodes,
            "grad_steps": learner.grad_steps, "stopped_early": result.stopped_early,
            "final_eval": result.history[-1] if result.history else None,
            "config_hash": cfg_hash, "seed": phase.seed,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result
