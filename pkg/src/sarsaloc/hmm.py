"""Gaussian-emission HMM used for location inference.

Observations are float arrays of RSS values in dBm, one entry per AP, with
NaN marking an AP that delivered no packet on that tick. The joint emission
of a state is the product of independent per-AP Gaussians; missing APs are
skipped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels

SIGMA_FLOOR = 0.1
RSS_MIN = -120.0
RSS_MAX = 0.0
_SUM_TOL = 1e-9


def _frozen(a, ndim, name):
    a = np.array(a, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Prior, row-stochastic transitions, and per-state per-AP mean/std (dB)."""

    prior: np.ndarray
    trans: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        prior = _frozen(self.prior, 1, "prior")
        trans = _frozen(self.trans, 2, "trans")
        mu = _frozen(self.mu, 2, "mu")
        sigma = _frozen(self.sigma, 2, "sigma")
        n = prior.shape[0]
        if n < 1:
            raise ValueError("need at least one state")
        if trans.shape != (n, n):
            raise ValueError(f"trans must be {n}x{n}, got {trans.shape}")
        if mu.shape[0] != n or mu.shape[1] < 1:
            raise ValueError(f"mu must be {n}xM with M >= 1, got {mu.shape}")
        if sigma.shape != mu.shape:
            raise ValueError(f"sigma shape {sigma.shape} differs from mu {mu.shape}")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > _SUM_TOL:
            raise ValueError("prior must be a probability vector")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > _SUM_TOL):
            raise ValueError("trans rows must be probability vectors")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be non-negative")
        if np.any(sigma < self.sigma_floor):
            raise ValueError(f"sigma entries must be >= {self.sigma_floor}")
        for name, value in (("prior", prior), ("trans", trans), ("mu", mu), ("sigma", sigma)):
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.prior.shape[0]

    @property
    def n_aps(self) -> int:
        return self.mu.shape[1]

    def replace(self, **changes) -> "HmmParams":
        return replace(self, **changes)

    def _evolve(self, **changes) -> "HmmParams":
        # no re-validation: for updates that preserve the invariants by construction
        new = object.__new__(HmmParams)
        for name in ("prior", "trans", "mu", "sigma", "sigma_floor"):
            value = changes.get(name, getattr(self, name))
            if isinstance(value, np.ndarray):
                value.flags.writeable = False
            object.__setattr__(new, name, value)
        return new

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.prior, self.trans, self.mu, self.sigma):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def allclose(self, other: "HmmParams", atol: float = 0.0) -> bool:
        return all(
            x.shape == y.shape and np.allclose(x, y, rtol=0.0, atol=atol)
            for x, y in zip((self.prior, self.trans, self.mu, self.sigma),
                            (other.prior, other.trans, other.mu, other.sigma))
        )


@dataclass(frozen=True)
class PosteriorSeq:
    gamma: np.ndarray
    loglik: float


def as_observations(obs_seq, n_aps: int | None = None) -> np.ndarray:
    """Stack observations into an (L, M) float array and validate readings."""
    z = np.array(obs_seq, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("observation sequence must be a non-empty (L, M) array")
    if n_aps is not None and z.shape[1] != n_aps:
        raise ValueError(f"expected {n_aps} AP readings per tick, got {z.shape[1]}")
    present = ~np.isnan(z)
    vals = z[present]
    if not np.all(np.isfinite(vals)):
        raise ValueError("present RSS readings must be finite")
    if np.any((vals < RSS_MIN) | (vals > RSS_MAX)):
        raise ValueError(f"RSS readings must lie in [{RSS_MIN}, {RSS_MAX}] dBm")
    return z


def log_emission(params: HmmParams, obs, state_j: int) -> float:
    if not 0 <= state_j < params.n_states:
        raise IndexError(f"state {state_j} out of range")
    z = as_observations(obs, params.n_aps)
    return float(_kernels.log_emission_matrix(
        z, params.mu[state_j:state_j + 1], params.sigma[state_j:state_j + 1])[0, 0])


def log_emission_matrix(params: HmmParams, obs_seq) -> np.ndarray:
    z = as_observations(obs_seq, params.n_aps)
    return _kernels.log_emission_matrix(z, params.mu, params.sigma)


def forward_backward(params: HmmParams, obs_seq) -> PosteriorSeq:
    """Smoothed state posteriors and total log-evidence of the sequence."""
    log_b = log_emission_matrix(params, obs_seq)
    gamma, loglik = _kernels.forward_backward_scaled(log_b, params.prior, params.trans)
    return PosteriorSeq(gamma, float(loglik))


def _forward_backward_trusted(params: HmmParams, z: np.ndarray) -> PosteriorSeq:
    # skips validation; callers hand over arrays they produced themselves
    log_b = _kernels.log_emission_matrix(z, params.mu, params.sigma)
    gamma, loglik = _kernels.forward_backward_scaled(log_b, params.prior, params.trans)
    return PosteriorSeq(gamma, float(loglik))


def decode_map(post: PosteriorSeq) -> np.ndarray:
    """Per-tick argmax of the smoothed posterior; lowest index wins ties."""
    return np.argmax(post.gamma, axis=1)


# ------------------------------------------------------------ text format
#
#   hmm <T> <M>
#   prior
#   <T values>
#   trans
#   <T lines of T values>
#   mu
#   <T lines of M values>
#   sigma
#   <T lines of M values>
#
# Values are written with repr() so the file round-trips exactly.

def _fmt_row(row) -> str:
    return " ".join(repr(float(x)) for x in row)


def format_params(params: HmmParams) -> str:
    lines = [f"hmm {params.n_states} {params.n_aps}", "prior", _fmt_row(params.prior)]
    for name in ("trans", "mu", "sigma"):
        lines.append(name)
        lines.extend(_fmt_row(r) for r in getattr(params, name))
    return "\n".join(lines) + "\n"


def parse_params(lines, sigma_floor: float = SIGMA_FLOOR) -> HmmParams:
    """Parse the block produced by :func:`format_params` from an iterable of lines."""
    it = iter(ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#"))
    header = next(it).split()
    if len(header) != 3 or header[0] != "hmm":
        raise ValueError(f"bad HMM header {' '.join(header)!r}")
    n, m = int(header[1]), int(header[2])

    def block(name, rows, cols):
        tag = next(it)
        if tag != name:
            raise ValueError(f"expected section {name!r}, found {tag!r}")
        out = []
        for _ in range(rows):
            vals = [float(x) for x in next(it).split()]
            if len(vals) != cols:
                raise ValueError(f"section {name!r}: expected {cols} values, got {len(vals)}")
            out.append(vals)
        return np.array(out)

    prior = block("prior", 1, n)[0]
    trans = block("trans", n, n)
    mu = block("mu", n, m)
    sigma = block("sigma", n, m)
    floor = min(sigma_floor, float(sigma.min()))
    return HmmParams(prior, trans, mu, sigma, sigma_floor=floor)


def save_params(params: HmmParams, path) -> None:
    Path(path).write_text(format_params(params))


def load_params(path) -> HmmParams:
    return parse_params(Path(path).read_text().splitlines())


def uniform_params(n_states: int, mu, sigma) -> HmmParams:
    n = n_states
    return HmmParams(np.full(n, 1.0 / n), np.full((n, n), 1.0 / n), mu, sigma)

