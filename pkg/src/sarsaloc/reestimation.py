"""Weighted one-shot re-estimation of HMM parameters from oracle labels.

Each update is a convex blend ``new = w * old + (1 - w) * sample`` where the
retention weight ``w`` says how much of the old model survives. Means and
transition rows are always blended; the prior is left alone. How the
variance is updated is selected by ``variance``:

``"blend"``
    ``w * var + (1 - w) * pop_var`` of the batch (a lone reading has
    ``pop_var = 0``).
``"mixture"``
    the variance of the ``w : 1-w`` mixture of the old Gaussian and the
    batch, i.e. ``"blend"`` plus ``w * (1 - w) * (mu - mean)**2``.
``"fixed"``
    variances are not touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .hmm import SIGMA_FLOOR, HmmParams

DEFAULT_ORACLE_WEIGHT = 0.7
VARIANCE_MODES = tuple(_kernels.VARIANCE_MODES)


class NoTransitionPairsWarning(UserWarning):
    pass


def check_weight(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"oracle weight must lie in [0, 1], got {w}")
    return w


@dataclass(frozen=True)
class LabeledBatch:
    """Oracle-labeled observations plus the labeled consecutive transitions.

    ``states[i]`` labels ``obs[i]`` (NaN = missing AP). ``pairs`` holds
    ``(from_state, to_state)`` rows for consecutive ticks that were both
    labeled.
    """

    states: np.ndarray
    obs: np.ndarray
    pairs: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64).reshape(-1)
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[None, :]
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if obs.shape[0] != states.shape[0]:
            raise ValueError("one label per observation required")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return self.states.shape[0]

    @classmethod
    def from_items(cls, items, consecutive=None) -> "LabeledBatch":
        """``items`` is a list of ``(state, observation)``.

        ``consecutive[i]`` set means item ``i`` directly follows item ``i-1``
        in time, so the pair counts as a transition.
        """
        items = list(items)
        states = np.array([j for j, _ in items], dtype=np.int64)
        obs = np.array([np.asarray(o, dtype=float) for _, o in items])
        pairs = []
        if consecutive is not None:
            for i in range(1, len(items)):
                if consecutive[i]:
                    pairs.append((states[i - 1], states[i]))
        return cls(states, obs, np.array(pairs, dtype=np.int64).reshape(-1, 2))

    @classmethod
    def from_sequence(cls, labels, obs) -> "LabeledBatch":
        """Build from a tick-aligned label vector where -1 marks unlabeled ticks."""
        labels = np.asarray(labels, dtype=np.int64)
        obs = np.asarray(obs, dtype=float)
        keep = labels >= 0
        both = keep[1:] & keep[:-1]
        pairs = np.stack([labels[:-1][both], labels[1:][both]], axis=1)
        return cls(labels[keep], obs[keep], pairs)

    def validate(self, n_states: int, n_aps: int) -> None:
        if len(self) == 0 and self.pairs.shape[0] == 0:
            raise ValueError("labeled batch is empty")
        if len(self) and self.obs.shape[1] != n_aps:
            raise ValueError(f"batch has {self.obs.shape[1]} APs, model has {n_aps}")
        for arr in (self.states, self.pairs.reshape(-1)):
            if arr.size and (arr.min() < 0 or arr.max() >= n_states):
                raise ValueError(f"labels must lie in [0, {n_states})")


def _mode(variance: str) -> int:
    try:
        return _kernels.VARIANCE_MODES[variance]
    except KeyError:
        raise ValueError(f"variance must be one of {VARIANCE_MODES}, got {variance!r}") from None


def reestimate_emissions(params: HmmParams, batch: LabeledBatch, w: float,
                         sigma_floor: float = SIGMA_FLOOR,
                         variance: str = "blend") -> HmmParams:
    """Blend each labeled (state, AP) Gaussian with the batch sample moments.

    Only (state, AP) cells with at least one present reading change.
    """
    w = check_weight(w)
    if len(batch) == 0:
        raise ValueError("labeled batch is empty")
    batch.validate(params.n_states, params.n_aps)
    return _emissions(params, batch, w, sigma_floor, _mode(variance))


def _emissions(params, batch, w, sigma_floor, mode):
    mu, sigma = _kernels.blend_emissions(params.mu, params.sigma, batch.states,
                                         batch.obs, w, sigma_floor, mode)
    return params._evolve(mu=mu, sigma=sigma,
                          sigma_floor=min(params.sigma_floor, sigma_floor))


def _observable(params, observable):
    if observable is None:
        return np.ones(params.n_states, dtype=np.bool_)
    mask = np.asarray(observable, dtype=np.bool_).reshape(-1)
    if mask.shape[0] != params.n_states:
        raise ValueError("observable mask needs one flag per state")
    return mask


def reestimate_transitions(params: HmmParams, batch: LabeledBatch, w: float,
                           observable=None) -> HmmParams:
    """Blend every row with labeled outgoing pairs toward its empirical row.

    With every state observable (the default) a row becomes
    ``w * row + (1 - w) * counts / counts.sum()``. When only some states can
    ever be labeled, pass ``observable``: the blend then runs inside the
    observable columns and leaves the mass on the others alone.
    """
    w = check_weight(w)
    batch.validate(params.n_states, params.n_aps)
    if batch.pairs.shape[0] == 0:
        warnings.warn("no consecutive labeled pairs; transitions left unchanged",
                      NoTransitionPairsWarning, stacklevel=2)
        return params
    if w == 1.0:
        # full retention; skipping the kernel avoids renormalisation rounding
        return params
    trans = _kernels.blend_transitions(params.trans, batch.pairs, w,
                                       _observable(params, observable))
    return params._evolve(trans=trans)


def reestimate(params: HmmParams, batch: LabeledBatch, w: float,
               sigma_floor: float = SIGMA_FLOOR, variance: str = "blend",
               transitions: bool = True, observable=None) -> HmmParams:
    """Emissions then transitions, skipping whichever part has no data."""
    w = check_weight(w)
    batch.validate(params.n_states, params.n_aps)
    if len(batch):
        params = _emissions(params, batch, w, sigma_floor, _mode(variance))
    if transitions and batch.pairs.shape[0] and w < 1.0:
        trans = _kernels.blend_transitions(params.trans, batch.pairs, w,
                                           _observable(params, observable))
        params = params._evolve(trans=trans)
    return params
