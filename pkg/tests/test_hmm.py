import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sarsaloc.hmm import (
    HmmParams, PosteriorSeq, as_observations, decode_map, format_params, forward_backward,
    load_params, log_emission, parse_params, save_params, uniform_params,
)

from oracles import brute_force_posterior, random_hmm

LOG_PEAK = math.log(1 / math.sqrt(2 * math.pi))


def params_from(prior, trans, mu, sigma):
    return HmmParams(prior, trans, mu, sigma)


class TestParams:
    def test_rejects_bad_prior(self):
        with pytest.raises(ValueError):
            HmmParams([0.5, 0.6], np.eye(2), np.zeros((2, 1)) - 50, np.ones((2, 1)))

    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            HmmParams([0.5, 0.5], [[0.5, 0.4], [0, 1]], np.zeros((2, 1)) - 50, np.ones((2, 1)))

    def test_rejects_sigma_below_floor(self):
        with pytest.raises(ValueError):
            HmmParams([1.0], [[1.0]], [[-50.0]], [[0.05]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            HmmParams([1.0], [[1.0]], [[-50.0, -60.0]], [[1.0]])

    def test_arrays_are_read_only(self):
        p = uniform_params(2, [[-50.0], [-60.0]], [[1.0], [1.0]])
        with pytest.raises(ValueError):
            p.mu[0, 0] = 0.0

    def test_text_round_trip(self, rng, tmp_path):
        prior, trans, mu, sigma, _ = random_hmm(rng, 4, 3)
        p = params_from(prior, trans, mu, sigma)
        again = parse_params(format_params(p).splitlines())
        assert again.checksum() == p.checksum()
        save_params(p, tmp_path / "m.hmm")
        assert load_params(tmp_path / "m.hmm").checksum() == p.checksum()

    def test_parse_reports_bad_section(self):
        text = "hmm 1 1\nprior\n1.0\ntransition\n1.0\nmu\n-50\nsigma\n1\n"
        with pytest.raises(ValueError, match="trans"):
            parse_params(text.splitlines())


class TestObservations:
    def test_nan_is_absent(self):
        z = as_observations([[-50.0, math.nan]])
        assert z.shape == (1, 2) and math.isnan(z[0, 1])

    @pytest.mark.parametrize("bad", [[[math.inf, -50.0]], [[-130.0, -50.0]], [[5.0, -50.0]]])
    def test_bad_readings_rejected(self, bad):
        with pytest.raises(ValueError):
            as_observations(bad)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            as_observations(np.empty((0, 2)))


class TestEmission:
    def test_peak_density(self):
        p = uniform_params(1, [[-60.0]], [[1.0]])
        assert log_emission(p, [-60.0], 0) == pytest.approx(LOG_PEAK, abs=1e-12)

    def test_all_absent_is_zero(self):
        p = uniform_params(3, np.full((3, 2), -60.0), np.full((3, 2), 3.0))
        assert all(log_emission(p, [math.nan, math.nan], j) == 0.0 for j in range(3))

    def test_two_aps(self):
        p = uniform_params(1, [[-60.0, -70.0]], [[1.0, 1.0]])
        assert log_emission(p, [-59.0, -70.0], 0) == pytest.approx(2 * LOG_PEAK - 0.5, abs=1e-12)

    def test_state_range_checked(self):
        p = uniform_params(1, [[-60.0]], [[1.0]])
        with pytest.raises(IndexError):
            log_emission(p, [-60.0], 1)


class TestForwardBackward:
    def test_single_state(self, rng):
        p = uniform_params(1, [[-60.0, -70.0]], [[2.0, 2.0]])
        post = forward_backward(p, rng.uniform(-90, -40, size=(6, 2)))
        assert np.array_equal(post.gamma, np.ones((6, 1)))

    def test_no_information_gives_uniform(self):
        p = uniform_params(4, np.full((4, 2), -60.0), np.full((4, 2), 3.0))
        post = forward_backward(p, np.full((5, 2), np.nan))
        assert np.allclose(post.gamma, 0.25, atol=1e-12)
        assert post.loglik == pytest.approx(0.0, abs=1e-12)

    def test_two_state_three_step_oracle(self, rng):
        prior, trans, mu, sigma, obs = random_hmm(rng, 2, 2, n_steps=3)
        post = forward_backward(params_from(prior, trans, mu, sigma), obs)
        gamma, loglik = brute_force_posterior(prior, trans, mu, sigma, obs)
        assert np.allclose(post.gamma, gamma, atol=1e-9, rtol=0)
        assert post.loglik == pytest.approx(loglik, abs=1e-9)
        assert np.array_equal(decode_map(post), np.argmax(gamma, axis=1))

    @given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_matches_enumeration(self, n_states, n_steps, n_aps, seed):
        g = np.random.default_rng(seed)
        prior, trans, mu, sigma, obs = random_hmm(g, n_states, n_aps, missing=0.2, n_steps=n_steps)
        post = forward_backward(params_from(prior, trans, mu, sigma), obs)
        gamma, loglik = brute_force_posterior(prior, trans, mu, sigma, obs)
        assert np.allclose(post.gamma, gamma, atol=1e-9, rtol=0)
        assert abs(post.loglik - loglik) <= 1e-9

    def test_absent_tick_matches_oracle(self, rng):
        prior, trans, mu, sigma, obs = random_hmm(rng, 3, 2, n_steps=5)
        obs[2] = np.nan
        post = forward_backward(params_from(prior, trans, mu, sigma), obs)
        gamma, _ = brute_force_posterior(prior, trans, mu, sigma, obs)
        assert np.allclose(post.gamma[2], gamma[2], atol=1e-9, rtol=0)

    @given(st.integers(1, 30), st.integers(1, 500), st.integers(0, 2**32 - 1))
    def test_rows_normalised(self, n_states, n_steps, seed):
        g = np.random.default_rng(seed)
        prior, trans, mu, sigma, obs = random_hmm(g, n_states, 3, missing=0.1, n_steps=n_steps)
        post = forward_backward(params_from(prior, trans, mu, sigma), obs)
        assert np.all(np.abs(post.gamma.sum(axis=1) - 1) <= 1e-9)
        assert np.all((post.gamma >= 0) & (post.gamma <= 1 + 1e-12))
        assert math.isfinite(post.loglik)

    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_relabelling_permutes_columns(self, n_states, seed):
        g = np.random.default_rng(seed)
        prior, trans, mu, sigma, obs = random_hmm(g, n_states, 2, n_steps=8)
        perm = g.permutation(n_states)
        a = forward_backward(params_from(prior, trans, mu, sigma), obs)
        b = forward_backward(params_from(prior[perm], trans[np.ix_(perm, perm)],
                                         mu[perm], sigma[perm]), obs)
        assert np.allclose(b.gamma, a.gamma[:, perm], atol=1e-10)
        assert b.loglik == pytest.approx(a.loglik, abs=1e-9)

    def test_overconfident_model_is_less_likely(self):
        # data spread 5 dB around a mean the model misplaces by 4 dB
        g = np.random.default_rng(3)
        obs = (-60.0 + 5.0 * g.standard_normal(200))[:, None]
        liks = [forward_backward(uniform_params(1, [[-64.0]], [[s]]), obs).loglik
                for s in (6.0, 3.0, 1.0)]
        assert liks[0] >= liks[1] >= liks[2]

    def test_rejects_non_finite_present_reading(self):
        p = uniform_params(1, [[-60.0]], [[1.0]])
        with pytest.raises(ValueError):
            forward_backward(p, [[math.inf]])


class TestDecode:
    def test_strict_argmax(self):
        assert decode_map(PosteriorSeq(np.array([[0.9, 0.1]]), 0.0)).tolist() == [0]

    def test_tie_takes_lowest(self):
        assert decode_map(PosteriorSeq(np.array([[0.5, 0.5]]), 0.0)).tolist() == [0]
