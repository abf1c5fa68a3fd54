"""Value-mixing networks and the multi-horizon role regulariser.

RoleMixer turns per-agent q-values into a team value through K latent roles:

    Q_tot = b2 + sum_j W2_j * u_j,
    u     = [sum of the first K2 role values, the remaining K - K2 role values],
    Q*_k  = ELU(b1_k + sum_i W1_ik * q_i),

where the agent-to-role weights W1 come from a softmax over the *agent* axis
of a small network applied to each agent's own observation. Because that
network only ever sees one observation at a time, W1 is defined for any team
size; the state-conditioned heads (b1, W2, b2) consume a pooled global
summary whose size is also team-independent. W2 is passed through abs() so
Q_tot stays monotone in every q_i (the softmax weights are non-negative by
construction).

The first K2 = ceil(K/2) role values also serve as multi-horizon predictors:
each is regressed onto a Monte-Carlo return computed with its own discount
from a strictly decreasing ladder, which is the regulariser wired into the
training loss. StateMixer is the ablation baseline: W1 comes from the global
state through abs() (no roles, no softmax), so its parameters are tied to one
specific team size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEAD_LOGIT_BIAS = -1e9


@dataclass(frozen=True)
class DiscountLadder:
    """Strictly decreasing per-role discounts plus the team TD discount."""

    gammas: tuple[float, ...]
    gamma_team: float = 0.99

    def __post_init__(self):
        if not self.gammas:
            raise ValueError("discount ladder needs at least one entry")
        for g in self.gammas:
            if not 0.0 < g <= 1.0:
                raise ValueError(f"ladder discount {g} outside (0, 1]")
        diffs = np.diff(self.gammas)
        if len(self.gammas) > 1 and not (diffs < 0).all():
            raise ValueError(f"ladder must be strictly decreasing, got {self.gammas}")
        if not 0.0 < self.gamma_team <= 1.0:
            raise ValueError(f"gamma_team {self.gamma_team} outside (0, 1]")

    @classmethod
    def linear(cls, k2: int, hi: float = 0.99, lo: float = 0.50,
               gamma_team: float = 0.99) -> "DiscountLadder":
        if k2 < 1:
            raise ValueError("k2 must be >= 1")
        gammas = tuple(float(g) for g in np.linspace(hi, lo, k2))
        return cls(gammas=gammas, gamma_team=gamma_team)


def half_count(role_count: int) -> int:
    """Number of short-horizon roles: ceil(K / 2)."""
    return math.ceil(role_count / 2)


def discounted_tails(rewards: np.ndarray, gammas) -> np.ndarray:
    """Per-discount Monte-Carlo tails: out[t, k] = sum_u gammas[k]^u * r[t+u].

    Tails truncate at the end of the episode, matching the finite-horizon
    returns the regularised role values are asked to predict.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    gammas = np.asarray(gammas, dtype=np.float64)
    out = np.zeros((len(rewards), len(gammas)))
    acc = np.zeros(len(gammas))
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gammas * acc
        out[t] = acc
    return out


def _linear_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class RoleMixer:
    def __init__(self, obs_dim: int, state_dim: int, role_count: int = 16,
                 hyper_hidden: int = 32, head_hidden: int = 32,
                 rng: np.random.Generator | None = None, dtype=None):
        if role_count < 2:
            raise ValueError("role_count must be >= 2 so the LSTRR split is non-trivial")
        if rng is None:
            rng = np.random.default_rng(0)
        dtype = np.dtype(dtype or ad.DEFAULT_DTYPE)
        self.obs_dim = obs_dim
        self.state_dim = state_dim
        self.role_count = role_count
        self.k2 = half_count(role_count)
        self.mix_width = role_count - self.k2 + 1
        self.hyper_hidden = hyper_hidden
        self.head_hidden = head_hidden
        self.dtype = dtype
        k, j, hm, hh = role_count, self.mix_width, hyper_hidden, head_hidden
        self.params: dict[str, ad.Tensor] = {
            "u1": ad.parameter(_linear_init(rng, (obs_dim, hm), obs_dim, dtype), name="u1"),
            "u2": ad.parameter(_linear_init(rng, (hm, k), hm, dtype), name="u2"),
            "b1_w": ad.parameter(_linear_init(rng, (state_dim, k), state_dim, dtype), name="b1_w"),
            "b1_b": ad.parameter(np.zeros(k, dtype=dtype), name="b1_b"),
            "trunk_w": ad.parameter(_linear_init(rng, (state_dim, hh), state_dim, dtype),
                                    name="trunk_w"),
            "trunk_b": ad.parameter(np.zeros(hh, dtype=dtype), name="trunk_b"),
            "w2_w": ad.parameter(_linear_init(rng, (hh, j), hh, dtype), name="w2_w"),
            "w2_b": ad.parameter(np.zeros(j, dtype=dtype), name="w2_b"),
            "b2_w": ad.parameter(_linear_init(rng, (hh, 1), hh, dtype), name="b2_w"),
            "b2_b": ad.parameter(np.zeros(1, dtype=dtype), name="b2_b"),
        }

    # -- graph builders ------------------------------------------------------

    def role_logits(self, obs: ad.Tensor) -> ad.Tensor:
        """(..., D) observations -> (..., K) per-agent role scores."""
        p = self.params
        return ad.matmul(ad.elu(ad.matmul(obs, p["u1"])), p["u2"])

    def role_weight_tensor(self, obs: ad.Tensor, alive: np.ndarray) -> ad.Tensor:
        """(B, N, D) obs + (B, N) alive -> (B, N, K) softmax over the agent axis.

        Dead agents get a large negative logit bias so all weight mass stays
        on living agents.
        """
        logits = self.role_logits(obs)
        alive = np.asarray(alive, dtype=bool)
        bias = np.where(alive[..., None], 0.0, DEAD_LOGIT_BIAS)
        bias = np.broadcast_to(bias, logits.data.shape).astype(self.dtype)
        return ad.softmax(ad.add(logits, ad.constant(bias)), axis=1)

    def state_heads(self, state: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """(B, S) -> (b1 (B, K), W2 (B, J) non-negative, b2 (B, 1))."""
        p = self.params
        b1 = ad.add(ad.matmul(state, p["b1_w"]), p["b1_b"])
        trunk = ad.elu(ad.add(ad.matmul(state, p["trunk_w"]), p["trunk_b"]))
        w2 = ad.absolute(ad.add(ad.matmul(trunk, p["w2_w"]), p["w2_b"]))
        b2 = ad.add(ad.matmul(trunk, p["b2_w"]), p["b2_b"])
        return b1, w2, b2

    def mix(self, obs: ad.Tensor, q_agents: ad.Tensor, state: ad.Tensor,
            alive: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """Full mixing pass.

        obs: (B, N, D), q_agents: (B, N) chosen-action values, state: (B, S),
        alive: (B, N) bool. Returns (Q_tot (B, 1), role values Q* (B, K)).
        Dead agents contribute zero value and zero role weight.
        """
        b, n = q_agents.data.shape
        w1 = self.role_weight_tensor(obs, alive)
        alive_f = ad.constant(np.asarray(alive, dtype=self.dtype))
        q_row = ad.reshape(ad.mul(q_agents, alive_f), (b, 1, n))
        mixed = ad.reshape(ad.matmul(q_row, w1), (b, self.role_count))
        b1, w2, b2 = self.state_heads(state)
        q_star = ad.elu(ad.add(mixed, b1))
        short = ad.reduce_sum(ad.slice_axis(q_star, 1, 0, self.k2), axis=1, keepdims=True)
        u = ad.concat([short, ad.slice_axis(q_star, 1, self.k2, self.role_count)], axis=1)
        q_tot = ad.add(ad.reduce_sum(ad.mul(w2, u), axis=1, keepdims=True), b2)
        return q_tot, q_star

    # -- inference helpers ------------------------------------------------------

    def role_weights(self, obs: np.ndarray, alive: np.ndarray) -> np.ndarray:
        """(N, D) observations + (N,) alive -> (N, K) numpy role weights."""
        obs = np.asarray(obs, dtype=self.dtype)
        alive = np.asarray(alive, dtype=bool)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ad.ShapeError(f"expected (N, {self.obs_dim}) observations, got {obs.shape}")
        if alive.shape != (obs.shape[0],):
            raise ad.ShapeError(f"alive flags {alive.shape} do not match {obs.shape[0]} agents")
        if not alive.any():
            raise ValueError("role weights undefined: every agent is dead")
        with ad.no_grad():
            w1 = self.role_weight_tensor(ad.constant(obs[None]), alive[None])
        return w1.data[0]

    def q_tot(self, obs: np.ndarray, q_agents: np.ndarray, state: np.ndarray,
              alive: np.ndarray) -> float:
        with ad.no_grad():
            out, _ = self.mix(ad.constant(np.asarray(obs, self.dtype)[None]),
                              ad.constant(np.asarray(q_agents, self.dtype)[None]),
                              ad.constant(np.asarray(state, self.dtype)[None]),
                              np.asarray(alive, dtype=bool)[None])
        return float(out.data[0, 0])

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k!r}")
            if arrays[k].shape != p.data.shape:
                raise ValueError(
                    f"parameter {k!r}: expected shape {p.data.shape}, got {arrays[k].shape}"
                )
            p.data = arrays[k].astype(self.dtype)

    def meta(self) -> dict:
        return {
            "kind": "role",
            "obs_dim": self.obs_dim,
            "state_dim": self.state_dim,
            "role_count": self.role_count,
            "hyper_hidden": self.hyper_hidden,
            "head_hidden": self.head_hidden,
        }


class StateMixer:
    """Monotonic baseline mixer whose agent weights come from the global state.

    The first-layer weight matrix has one row per agent, so an instance is
    valid for exactly one team size; loading its parameters into a different
    team size is refused.
    """

    def __init__(self, n_agents: int, state_dim: int, role_count: int = 16,
                 head_hidden: int = 32, rng: np.random.Generator | None = None,
                 dtype=None):
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)
        dtype = np.dtype(dtype or ad.DEFAULT_DTYPE)
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.role_count = role_count
        self.head_hidden = head_hidden
        self.dtype = dtype
        k, hh, n = role_count, head_hidden, n_agents
        self.params: dict[str, ad.Tensor] = {
            "w1_w": ad.parameter(_linear_init(rng, (state_dim, n * k), state_dim, dtype),
                                 name="w1_w"),
            "w1_b": ad.parameter(np.zeros(n * k, dtype=dtype), name="w1_b"),
            "b1_w": ad.parameter(_linear_init(rng, (state_dim, k), state_dim, dtype), name="b1_w"),
            "b1_b": ad.parameter(np.zeros(k, dtype=dtype), name="b1_b"),
            "trunk_w": ad.parameter(_linear_init(rng, (state_dim, hh), state_dim, dtype),
                                    name="trunk_w"),
            "trunk_b": ad.parameter(np.zeros(hh, dtype=dtype), name="trunk_b"),
            "w2_w": ad.parameter(_linear_init(rng, (hh, k), hh, dtype), name="w2_w"),
            "w2_b": ad.parameter(np.zeros(k, dtype=dtype), name="w2_b"),
            "b2_w": ad.parameter(_linear_init(rng, (hh, 1), hh, dtype), name="b2_w"),
            "b2_b": ad.parameter(np.zeros(1, dtype=dtype), name="b2_b"),
        }

    def mix(self, obs: ad.Tensor, q_agents: ad.Tensor, state: ad.Tensor,
            alive: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        b, n = q_agents.data.shape
        if n != self.n_agents:
            raise ValueError(
                f"mixer was built for {self.n_agents} agents, got a batch with {n}"
            )
        p = self.params
        w1 = ad.absolute(ad.add(ad.matmul(state, p["w1_w"]), p["w1_b"]))
        w1 = ad.reshape(w1, (b, n, self.role_count))
        alive_f = ad.constant(np.asarray(alive, dtype=self.dtype))
        q_row = ad.reshape(ad.mul(q_agents, alive_f), (b, 1, n))
        mixed = ad.reshape(ad.matmul(q_row, w1), (b, self.role_count))
        b1 = ad.add(ad.matmul(state, p["b1_w"]), p["b1_b"])
        q_star = ad.elu(ad.add(mixed, b1))
        trunk = ad.elu(ad.add(ad.matmul(state, p["trunk_w"]), p["trunk_b"]))
        w2 = ad.absolute(ad.add(ad.matmul(trunk, p["w2_w"]), p["w2_b"]))
        b2 = ad.add(ad.matmul(trunk, p["b2_w"]), p["b2_b"])
        q_tot = ad.add(ad.reduce_sum(ad.mul(w2, q_star), axis=1, keepdims=True), b2)
        return q_tot, q_star

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"missing parameter {k!r}")
            if arrays[k].shape != p.data.shape:
                raise ValueError(
                    f"parameter {k!r}: expected shape {p.data.shape}, got {arrays[k].shape}"
                )
            p.data = arrays[k].astype(self.dtype)

    def meta(self) -> dict:
        return {
            "kind": "state",
            "n_agents": self.n_agents,
            "state_dim": self.state_dim,
            "role_count": self.role_count,
            "head_hidden": self.head_hidden,
        }
