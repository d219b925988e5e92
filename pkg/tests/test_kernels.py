import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarsaloc import _kernels as K

from oracles import random_hmm

pytestmark = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")
SEEDS = st.integers(0, 2**32 - 1)


@given(st.integers(1, 8), st.integers(1, 40), st.integers(1, 4), SEEDS)
def test_emission_and_inference_agree(n_states, n_steps, n_aps, seed):
    g = np.random.default_rng(seed)
    prior, trans, mu, sigma, obs = random_hmm(g, n_states, n_aps, missing=0.2, n_steps=n_steps)
    a = K.log_emission_matrix_numpy(obs, mu, sigma)
    b = K.log_emission_matrix_numba(obs, mu, sigma)
    assert np.allclose(a, b, atol=1e-10, rtol=0)
    ga, la = K.forward_backward_scaled_numpy(a, prior, trans)
    gb, lb = K.forward_backward_scaled_numba(a, prior, trans)
    assert np.allclose(ga, gb, atol=1e-10, rtol=0)
    assert abs(la - lb) <= 1e-8


@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 25), st.floats(0, 1),
       st.sampled_from(sorted(K.VARIANCE_MODES.values())), SEEDS)
def test_emission_blend_agrees(n_states, n_aps, size, w, mode, seed):
    g = np.random.default_rng(seed)
    mu = g.uniform(-90, -40, size=(n_states, n_aps))
    sigma = g.uniform(0.5, 6, size=(n_states, n_aps))
    states = g.integers(n_states, size=size).astype(np.int64)
    obs = g.uniform(-95, -35, size=(size, n_aps))
    obs[g.random(obs.shape) < 0.25] = np.nan
    a = K.blend_emissions_numpy(mu, sigma, states, obs, w, 0.1, mode)
    b = K.blend_emissions_numba(mu, sigma, states, obs, w, 0.1, mode)
    assert np.allclose(a[0], b[0], atol=1e-10, rtol=0)
    assert np.allclose(a[1], b[1], atol=1e-10, rtol=0)


@given(st.integers(1, 7), st.integers(1, 30), st.floats(0, 1), SEEDS)
def test_transition_blend_agrees(n, n_pairs, w, seed):
    g = np.random.default_rng(seed)
    trans = g.dirichlet(np.ones(n), size=n)
    pairs = g.integers(n, size=(n_pairs, 2)).astype(np.int64)
    observable = g.random(n) < 0.7
    a = K.blend_transitions_numpy(trans, pairs, w, observable)
    b = K.blend_transitions_numba(trans, pairs, w, observable)
    assert np.allclose(a, b, atol=1e-12, rtol=0)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 200), SEEDS)
def test_walk_agrees(rows, cols, n_steps, seed):
    g = np.random.default_rng(seed)
    start = int(g.integers(rows * cols))
    u = g.random(n_steps)
    assert np.array_equal(K.random_walk_numpy(start, u, rows, cols),
                          K.random_walk_numba(start, u, rows, cols))


def test_environment_flag_selects_numpy():
    code = "from sarsaloc import _kernels as K; print(K.backend(), K.random_walk.__name__)"
    env = dict(os.environ, SARSALOC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    assert out == ["numpy", "random_walk_numpy"]


def test_default_backend_is_numba():
    if os.environ.get("SARSALOC_DISABLE_NUMBA"):
        pytest.skip("fallback forced for this run")
    assert K.backend() == "numba"
