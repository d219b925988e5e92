"""Hot numeric kernels: HMM inference, re-estimation moments, random walk.

Every kernel exists twice, a numba ``@njit`` version and a pure-numpy one.
The exported names (``log_emission_matrix``, ``forward_backward_scaled``,
``blend_emissions``, ``blend_transitions``, ``random_walk``) point at the
numba versions unless numba is missing or the environment variable
``SARSALOC_DISABLE_NUMBA`` is set to a truthy value before import.
"""

import math
import os

import numpy as np

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("SARSALOC_DISABLE_NUMBA", "").strip().lower() in {
    "1", "true", "yes", "on",
}
HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


# ---------------------------------------------------------------- numpy path

def log_emission_matrix_numpy(obs, mu, sigma):
    """(L, M) observations with NaN for missing -> (L, T) log-densities."""
    present = np.isfinite(obs)
    z = np.where(present, obs, 0.0)
    d = (z[:, None, :] - mu[None, :, :]) / sigma[None, :, :]
    terms = -0.5 * d * d - np.log(sigma)[None, :, :] - _LOG_SQRT_2PI
    return np.where(present[:, None, :], terms, 0.0).sum(axis=2)


def forward_backward_scaled_numpy(log_b, prior, trans):
    n_steps, n_states = log_b.shape
    alpha = np.empty((n_steps, n_states))
    scale = np.empty(n_steps)
    shift = log_b.max(axis=1)
    b = np.exp(log_b - shift[:, None])

    a = prior * b[0]
    scale[0] = a.sum()
    alpha[0] = a / scale[0]
    for t in range(1, n_steps):
        a = (alpha[t - 1] @ trans) * b[t]
        scale[t] = a.sum()
        alpha[t] = a / scale[t]

    beta = np.empty((n_steps, n_states))
    beta[-1] = 1.0
    for t in range(n_steps - 2, -1, -1):
        beta[t] = trans @ (b[t + 1] * beta[t + 1]) / scale[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    loglik = float(np.log(scale).sum() + shift.sum())
    return gamma, loglik


VARIANCE_MODES = {"blend": 0, "mixture": 1, "fixed": 2}


def blend_emissions_numpy(mu, sigma, states, obs, w, floor, mode):
    present = np.isfinite(obs)
    x = np.where(present, obs, 0.0)
    shape = mu.shape
    count = np.zeros(shape)
    total = np.zeros(shape)
    np.add.at(count, states, present.astype(float))
    np.add.at(total, states, x)
    hit = count > 0
    mean = np.divide(total, count, out=np.zeros(shape), where=hit)
    dev = np.where(present, x - mean[states], 0.0)
    sq = np.zeros(shape)
    np.add.at(sq, states, dev * dev)
    pop_var = np.divide(sq, count, out=np.zeros(shape), where=hit)

    mu_new = w * mu + (1.0 - w) * mean
    # keep the blend inside [old, sample] despite rounding
    mu_new = np.clip(mu_new, np.minimum(mu, mean), np.maximum(mu, mean))
    if mode == 2:
        sigma_new = sigma.copy()
    else:
        var = w * sigma * sigma + (1.0 - w) * pop_var
        if mode == 1:
            var = var + w * (1.0 - w) * (mu - mean) ** 2
        sigma_new = np.sqrt(np.maximum(floor * floor, var))
    return np.where(hit, mu_new, mu), np.where(hit, sigma_new, sigma)


def blend_transitions_numpy(trans, pairs, w, observable):
    """Blend rows toward empirical successor frequencies.

    Only columns flagged ``observable`` are re-estimated; the row mass on the
    other columns is kept, because a transition into an unobservable state
    can never show up as a labeled pair.
    """
    n = trans.shape[0]
    counts = np.zeros((n, n))
    np.add.at(counts, (pairs[:, 0], pairs[:, 1]), 1.0)
    out = counts.sum(axis=1)
    new = trans.copy()
    obs_cols = observable.astype(bool)
    for i in np.flatnonzero(out > 0):
        mass = trans[i, obs_cols].sum()
        if mass <= 0.0:
            continue
        emp = counts[i, obs_cols] / out[i]
        new[i, obs_cols] = w * trans[i, obs_cols] + (1.0 - w) * mass * emp
        new[i] /= new[i].sum()
    return new


def random_walk_numpy(start, uniforms, rows, cols):
    """Lazy 4-neighbour walk; ``uniforms[t]`` picks among stay + legal moves."""
    path = np.empty(uniforms.shape[0] + 1, dtype=np.int64)
    path[0] = start
    opts = np.empty(5, dtype=np.int64)
    cell = start
    for t in range(uniforms.shape[0]):
        r, c = divmod(int(cell), cols)
        n = 0
        opts[n] = cell; n += 1
        if r > 0:
            opts[n] = cell - cols; n += 1
        if r < rows - 1:
            opts[n] = cell + cols; n += 1
        if c > 0:
            opts[n] = cell - 1; n += 1
        if c < cols - 1:
            opts[n] = cell + 1; n += 1
        cell = opts[min(int(uniforms[t] * n), n - 1)]
        path[t + 1] = cell
    return path


# ---------------------------------------------------------------- numba path

if HAS_NUMBA:

    @numba.njit(cache=True)
    def log_emission_matrix_numba(obs, mu, sigma):
        n_steps, n_aps = obs.shape
        n_states = mu.shape[0]
        log_sigma = np.log(sigma)
        out = np.zeros((n_steps, n_states))
        for t in range(n_steps):
            for j in range(n_states):
                acc = 0.0
                for k in range(n_aps):
                    z = obs[t, k]
                    if np.isfinite(z):
                        d = (z - mu[j, k]) / sigma[j, k]
                        acc += -0.5 * d * d - log_sigma[j, k] - _LOG_SQRT_2PI
                out[t, j] = acc
        return out

    @numba.njit(cache=True)
    def forward_backward_scaled_numba(log_b, prior, trans):
        n_steps, n_states = log_b.shape
        b = np.empty((n_steps, n_states))
        shift_total = 0.0
        for t in range(n_steps):
            m = log_b[t, 0]
            for j in range(1, n_states):
                if log_b[t, j] > m:
                    m = log_b[t, j]
            shift_total += m
            for j in range(n_states):
                b[t, j] = math.exp(log_b[t, j] - m)

        alpha = np.empty((n_steps, n_states))
        scale = np.empty(n_steps)
        c = 0.0
        for j in range(n_states):
            alpha[0, j] = prior[j] * b[0, j]
            c += alpha[0, j]
        scale[0] = c
        for j in range(n_states):
            alpha[0, j] /= c
        for t in range(1, n_steps):
            c = 0.0
            for j in range(n_states):
                acc = 0.0
                for i in range(n_states):
                    acc += alpha[t - 1, i] * trans[i, j]
                alpha[t, j] = acc * b[t, j]
                c += alpha[t, j]
            scale[t] = c
            for j in range(n_states):
                alpha[t, j] /= c

        beta = np.empty((n_steps, n_states))
        for j in range(n_states):
            beta[n_steps - 1, j] = 1.0
        tmp = np.empty(n_states)
        for t in range(n_steps - 2, -1, -1):
            for j in range(n_states):
                tmp[j] = b[t + 1, j] * beta[t + 1, j]
            for i in range(n_states):
                acc = 0.0
                for j in range(n_states):
                    acc += trans[i, j] * tmp[j]
                beta[t, i] = acc / scale[t + 1]

        gamma = np.empty((n_steps, n_states))
        loglik = shift_total
        for t in range(n_steps):
            loglik += math.log(scale[t])
            s = 0.0
            for j in range(n_states):
                gamma[t, j] = alpha[t, j] * beta[t, j]
                s += gamma[t, j]
            for j in range(n_states):
                gamma[t, j] /= s
        return gamma, loglik

    @numba.njit(cache=True)
    def blend_emissions_numba(mu, sigma, states, obs, w, floor, mode):
        n_states, n_aps = mu.shape
        count = np.zeros((n_states, n_aps))
        total = np.zeros((n_states, n_aps))
        for i in range(states.shape[0]):
            j = states[i]
            for k in range(n_aps):
                z = obs[i, k]
                if np.isfinite(z):
                    count[j, k] += 1.0
                    total[j, k] += z
        mean = np.zeros((n_states, n_aps))
        for j in range(n_states):
            for k in range(n_aps):
                if count[j, k] > 0:
                    mean[j, k] = total[j, k] / count[j, k]
        sq = np.zeros((n_states, n_aps))
        for i in range(states.shape[0]):
            j = states[i]
            for k in range(n_aps):
                z = obs[i, k]
                if np.isfinite(z):
                    d = z - mean[j, k]
                    sq[j, k] += d * d
        mu_new = mu.copy()
        sigma_new = sigma.copy()
        for j in range(n_states):
            for k in range(n_aps):
                if count[j, k] == 0:
                    continue
                m_old = mu[j, k]
                xbar = mean[j, k]
                m = w * m_old + (1.0 - w) * xbar
                lo = min(m_old, xbar)
                hi = max(m_old, xbar)
                mu_new[j, k] = min(max(m, lo), hi)
                if mode != 2:
                    var = w * sigma[j, k] * sigma[j, k] + (1.0 - w) * sq[j, k] / count[j, k]
                    if mode == 1:
                        var += w * (1.0 - w) * (m_old - xbar) ** 2
                    sigma_new[j, k] = math.sqrt(max(floor * floor, var))
        return mu_new, sigma_new

    @numba.njit(cache=True)
    def blend_transitions_numba(trans, pairs, w, observable):
        n = trans.shape[0]
        counts = np.zeros((n, n))
        for p in range(pairs.shape[0]):
            counts[pairs[p, 0], pairs[p, 1]] += 1.0
        new = trans.copy()
        for i in range(n):
            out = 0.0
            mass = 0.0
            for j in range(n):
                out += counts[i, j]
                if observable[j]:
                    mass += trans[i, j]
            if out == 0 or mass <= 0.0:
                continue
            s = 0.0
            for j in range(n):
                if observable[j]:
                    new[i, j] = w * trans[i, j] + (1.0 - w) * mass * counts[i, j] / out
                s += new[i, j]
            for j in range(n):
                new[i, j] /= s
        return new

    @numba.njit(cache=True)
    def random_walk_numba(start, uniforms, rows, cols):
        path = np.empty(uniforms.shape[0] + 1, dtype=np.int64)
        path[0] = start
        opts = np.empty(5, dtype=np.int64)
        cell = start
        for t in range(uniforms.shape[0]):
            r = cell // cols
            c = cell % cols
            n = 0
            opts[n] = cell
            n += 1
            if r > 0:
                opts[n] = cell - cols
                n += 1
            if r < rows - 1:
                opts[n] = cell + cols
                n += 1
            if c > 0:
                opts[n] = cell - 1
                n += 1
            if c < cols - 1:
                opts[n] = cell + 1
                n += 1
            cell = opts[min(int(uniforms[t] * n), n - 1)]
            path[t + 1] = cell
        return path

else:  # pragma: no cover
    log_emission_matrix_numba = log_emission_matrix_numpy
    forward_backward_scaled_numba = forward_backward_scaled_numpy
    blend_emissions_numba = blend_emissions_numpy
    blend_transitions_numba = blend_transitions_numpy
    random_walk_numba = random_walk_numpy


_suffix = "_numba" if USE_NUMBA else "_numpy"
log_emission_matrix = globals()["log_emission_matrix" + _suffix]
forward_backward_scaled = globals()["forward_backward_scaled" + _suffix]
blend_emissions = globals()["blend_emissions" + _suffix]
blend_transitions = globals()["blend_transitions" + _suffix]
random_walk = globals()["random_walk" + _suffix]


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
