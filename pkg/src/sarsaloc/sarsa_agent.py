"""Two-state sensing MDP with a boosted SARSA update.

S1 is enhanced (oracle) sensing, S2 is low-power RSS-only sensing. Action A1
leads to S1 and A2 leads to S2, deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

POLICIES = ("greedy", "epsilon_greedy", "softmax")


class MdpState(IntEnum):
    S1 = 0
    S2 = 1

    @classmethod
    def parse(cls, text: str) -> "MdpState":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown MDP state {text!r}") from None


class MdpAction(IntEnum):
    A1 = 0
    A2 = 1

    @classmethod
    def parse(cls, text: str) -> "MdpAction":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown MDP action {text!r}") from None


def next_state(action: MdpAction) -> MdpState:
    return MdpState(int(action))


@dataclass(frozen=True)
class SarsaConfig:
    alpha: float = 0.4
    gamma: float = 0.9
    epsilon: float = 0.1
    tau: float = 1.0
    policy: str = "epsilon_greedy"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            # alpha=0 is allowed so a run can freeze the Q table
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be a positive finite number, got {self.tau}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            raise ValueError(f"rng_seed must be an unsigned integer, got {self.rng_seed}")


@dataclass(frozen=True)
class QTable:
    """State-action values, rows indexed by MdpState, columns by MdpAction."""

    values: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (2, 2):
            raise ValueError(f"Q table must be 2x2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("Q table entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls) -> "QTable":
        return cls(np.zeros((2, 2)))

    @classmethod
    def _trusted(cls, v: np.ndarray) -> "QTable":
        q = object.__new__(cls)
        v.flags.writeable = False
        object.__setattr__(q, "values", v)
        return q

    def __getitem__(self, key) -> float:
        s, a = key
        return float(self.values[int(s), int(a)])

    def row(self, s: MdpState) -> np.ndarray:
        return self.values[int(s)]

    def to_dict(self) -> dict:
        return {f"{s.name},{a.name}": self[s, a] for s in MdpState for a in MdpAction}


@dataclass(frozen=True)
class RewardSignal:
    r: int
    boost: int

    def __post_init__(self):
        if self.r not in (-1, 0, 1):
            raise ValueError(f"reward must be -1, 0 or +1, got {self.r}")
        if self.boost not in (-1, 1):
            raise ValueError(f"boost must be -1 or +1, got {self.boost}")

    @property
    def total(self) -> int:
        return self.r + self.boost


def immediate_reward(s: MdpState, a: MdpAction) -> int:
    if s == MdpState.S1 and a == MdpAction.A1:
        return -1
    if s == MdpState.S2 and a == MdpAction.A2:
        return 1
    return 0


def boost(e_t: float, e_prev: float) -> int:
    """+1 when the tracked error strictly decreased, -1 otherwise (ties lose)."""
    if not (math.isfinite(e_t) and math.isfinite(e_prev)):
        raise ValueError(f"boost needs finite errors, got {e_t!r}, {e_prev!r}")
    if e_t < 0 or e_prev < 0:
        raise ValueError(f"errors must be non-negative, got {e_t!r}, {e_prev!r}")
    return 1 if e_t < e_prev else -1


def sarsa_update(q: QTable, s: MdpState, a: MdpAction, boost: int,
                 s_next: MdpState, a_next: MdpAction, cfg: SarsaConfig) -> QTable:
    """One boosted SARSA backup; returns a new table with only (s, a) changed."""
    v = q.values.copy()
    i, j = int(s), int(a)
    target = boost + immediate_reward(s, a) + cfg.gamma * v[int(s_next), int(a_next)]
    v[i, j] += cfg.alpha * (target - v[i, j])
    if not math.isfinite(v[i, j]):
        raise FloatingPointError(f"Q({s.name},{a.name}) became non-finite")
    return QTable._trusted(v)


def select_greedy(q: QTable, s: MdpState) -> MdpAction:
    row = q.values[int(s)]
    # ties go to A1
    return MdpAction.A1 if row[0] >= row[1] else MdpAction.A2


def select_epsilon_greedy(q: QTable, s: MdpState, cfg: SarsaConfig,
                          rng: np.random.Generator) -> MdpAction:
    """Greedy with probability 1-eps; otherwise uniform over both actions."""
    if rng.random() < cfg.epsilon:
        return MdpAction(int(rng.integers(2)))
    return select_greedy(q, s)


def softmax_probs(q: QTable, s: MdpState, tau: float) -> np.ndarray:
    e0, e1 = _softmax_weights(q, s, tau)
    total = e0 + e1
    return np.array([e0 / total, e1 / total])


def _softmax_weights(q: QTable, s: MdpState, tau: float) -> tuple[float, float]:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    row = q.values[int(s)]
    z0, z1 = row[0] / tau, row[1] / tau
    m = max(z0, z1)
    return math.exp(z0 - m), math.exp(z1 - m)


def select_softmax(q: QTable, s: MdpState, cfg: SarsaConfig,
                   rng: np.random.Generator) -> MdpAction:
    e0, e1 = _softmax_weights(q, s, cfg.tau)
    return MdpAction.A1 if rng.random() < e0 / (e0 + e1) else MdpAction.A2


def select_action(q: QTable, s: MdpState, cfg: SarsaConfig,
                  rng: np.random.Generator) -> MdpAction:
    if cfg.policy == "greedy":
        return select_greedy(q, s)
    if cfg.policy == "epsilon_greedy":
        return select_epsilon_greedy(q, s, cfg, rng)
    return select_softmax(q, s, cfg, rng)
