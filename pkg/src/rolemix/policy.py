"""Shared recurrent per-agent Q-network and action selection.

One network instance serves every agent: the observation already carries the
agent's own status flags, so identity never enters the parameters and the
same weights work for any team size. Architecture: linear encoder with ReLU,
one GRU cell, linear head to the 7 action values.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .env import N_ACTIONS

HIDDEN_DIM = 64


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class AgentNet:
    def __init__(self, obs_dim: int, hidden_dim: int = HIDDEN_DIM,
                 n_actions: int = N_ACTIONS, rng: np.random.Generator | None = None,
                 dtype=None):
        if rng is None:
            rng = np.random.default_rng(0)
        dtype = np.dtype(dtype or ad.DEFAULT_DTYPE)
        self.obs_dim = obs_dim
        self.hidden_dim = hidden_dim
        self.n_actions = n_actions
        self.dtype = dtype
        h = hidden_dim
        self.params: dict[str, ad.Tensor] = {
            "enc_w": ad.parameter(_uniform(rng, (obs_dim, h), obs_dim, dtype), name="enc_w"),
            "enc_b": ad.parameter(np.zeros(h, dtype=dtype), name="enc_b"),
            "gru_wx": ad.parameter(_uniform(rng, (h, 3 * h), h, dtype), name="gru_wx"),
            "gru_wh": ad.parameter(_uniform(rng, (h, 3 * h), h, dtype), name="gru_wh"),
            "gru_bx": ad.parameter(np.zeros(3 * h, dtype=dtype), name="gru_bx"),
            "gru_bh": ad.parameter(np.zeros(3 * h, dtype=dtype), name="gru_bh"),
            "out_w": ad.parameter(_uniform(rng, (h, n_actions), h, dtype), name="out_w"),
            "out_b": ad.parameter(np.zeros(n_actions, dtype=dtype), name="out_b"),
        }

    def init_hidden(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.hidden_dim), dtype=self.dtype)

    def step(self, obs: ad.Tensor, h: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """One recurrent step: (B, D) observations, (B, H) hidden -> q, h'."""
        p = self.params
        x = ad.relu(ad.add(ad.matmul(obs, p["enc_w"]), p["enc_b"]))
        gx = ad.add(ad.matmul(x, p["gru_wx"]), p["gru_bx"])
        gh = ad.add(ad.matmul(h, p["gru_wh"]), p["gru_bh"])
        hd = self.hidden_dim
        update = ad.sigmoid(ad.add(ad.slice_axis(gx, -1, 0, hd),
                                   ad.slice_axis(gh, -1, 0, hd)))
        reset = ad.sigmoid(ad.add(ad.slice_axis(gx, -1, hd, 2 * hd),
                                  ad.slice_axis(gh, -1, hd, 2 * hd)))
        cand = ad.tanh(ad.add(ad.slice_axis(gx, -1, 2 * hd, 3 * hd),
                              ad.mul(reset, ad.slice_axis(gh, -1, 2 * hd, 3 * hd))))
        keep = ad.affine(update, -1.0, 1.0)  # 1 - update
        h_new = ad.add(ad.mul(keep, cand), ad.mul(update, h))
        q = ad.add(ad.matmul(h_new, p["out_w"]), p["out_b"])
        return q, h_new

    def q_values(self, obs: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference helper: numpy in, numpy out, no graph."""
        with ad.no_grad():
            q, h_new = self.step(ad.constant(obs, dtype=self.dtype),
                                 ad.constant(h, dtype=self.dtype))
        return q.data, h_new.data

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


def select_action(q: np.ndarray, avail: np.ndarray, eps: float,
                  rng: np.random.Generator | None) -> int:
    """Epsilon-greedy over available actions; greedy ties go to the lowest index."""
    avail = np.asarray(avail, dtype=bool)
    if not avail.any():
        raise ValueError("no available actions")
    if eps > 0.0:
        if rng is None:
            raise ValueError("eps > 0 requires an rng")
        if rng.random() < eps:
            options = np.flatnonzero(avail)
            return int(options[rng.integers(len(options))])
    masked = np.where(avail, q, -np.inf)
    return int(np.argmax(masked))


def select_actions(q: np.ndarray, avail: np.ndarray, alive: np.ndarray, eps: float,
                   rng: np.random.Generator | None) -> np.ndarray:
    """Joint action for one env: -1 for dead agents, ascending-index rng use."""
    n = q.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if alive[i]:
            out[i] = select_action(q[i], avail[i], eps, rng)
    return out


def anneal_eps(env_steps: int, start: float = 0.15, end: float = 0.05,
               horizon: int = 50_000) -> float:
    """Linear decay from start to end over `horizon` environment steps."""
    if horizon <= 0 or env_steps >= horizon:
        return end
    frac = env_steps / horizon
    return start + (end - start) * frac
