"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are imported from the same module regardless of
SARSALOC_DISABLE_NUMBA, so one run compares them side by side. The numba
versions are called once before timing so compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from sarsaloc import _kernels as k


def cases(rng):
    n_states, n_aps, window = 20, 6, 20
    mu = rng.uniform(-90, -50, size=(n_states, n_aps))
    sigma = np.full((n_states, n_aps), 4.0)
    obs = rng.uniform(-90, -50, size=(window, n_aps))
    obs[rng.random(obs.shape) < 0.05] = np.nan
    trans = rng.dirichlet(np.ones(n_states), size=n_states)
    prior = np.full(n_states, 1.0 / n_states)
    log_b = k.log_emission_matrix_numpy(obs, mu, sigma)
    states = rng.integers(n_states, size=window)
    pairs = np.stack([states[:-1], states[1:]], axis=1)
    observable = np.ones(n_states, dtype=np.bool_)
    uniforms = rng.random(200)
    return {
        "log_emission_matrix": (obs, mu, sigma),
        "forward_backward_scaled": (log_b, prior, trans),
        "blend_emissions": (mu, sigma, states, obs, 0.7, 0.1, 2),
        "blend_transitions": (trans, pairs, 0.7, observable),
        "random_walk": (0, uniforms, 4, 5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy us':>12}{'numba us':>12}{'speed-up':>10}")
    for name, call_args in cases(rng).items():
        fn_np = getattr(k, name + "_numpy")
        fn_nb = getattr(k, name + "_numba")
        fn_nb(*call_args)
        t_np = timeit.timeit(lambda: fn_np(*call_args), number=args.repeat) / args.repeat
        t_nb = timeit.timeit(lambda: fn_nb(*call_args), number=args.repeat) / args.repeat
        print(f"{name:<26}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
