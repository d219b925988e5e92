"""Independent reference implementations used as test oracles.

Nothing here imports the package's inference code: marginals come from
enumerating every state path and densities from scipy.stats.
"""

import itertools
import math

import numpy as np
from scipy.stats import norm


def emission_density(mu_row, sigma_row, z):
    p = 1.0
    for m, s, x in zip(mu_row, sigma_row, z):
        if not math.isnan(x):
            p *= norm.pdf(x, loc=m, scale=s)
    return p


def brute_force_posterior(prior, trans, mu, sigma, obs):
    """Smoothed marginals and log-evidence by summing over all T**L paths."""
    n_states, n_steps = len(prior), len(obs)
    b = np.array([[emission_density(mu[j], sigma[j], obs[t]) for j in range(n_states)]
                  for t in range(n_steps)])
    gamma = np.zeros((n_steps, n_states))
    total = 0.0
    for path in itertools.product(range(n_states), repeat=n_steps):
        p = prior[path[0]] * b[0, path[0]]
        for t in range(1, n_steps):
            p *= trans[path[t - 1], path[t]] * b[t, path[t]]
        total += p
        for t, j in enumerate(path):
            gamma[t, j] += p
    return gamma / total, math.log(total)


def random_hmm(rng, n_states, n_aps, missing=0.0, n_steps=4):
    prior = rng.dirichlet(np.ones(n_states))
    trans = rng.dirichlet(np.ones(n_states), size=n_states)
    mu = rng.uniform(-80, -50, size=(n_states, n_aps))
    sigma = rng.uniform(2.0, 8.0, size=(n_states, n_aps))
    obs = rng.uniform(-85, -45, size=(n_steps, n_aps))
    obs[rng.random(obs.shape) < missing] = np.nan
    return prior, trans, mu, sigma, obs
