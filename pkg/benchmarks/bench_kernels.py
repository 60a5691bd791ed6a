"""Time the numba kernels against their numpy twins at bound-lab sizes.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called in the same process (the numba builds directly, the
numpy ones through the ``*_np`` names), so IBGEN_DISABLE_NUMBA is not needed.
"""

import argparse
import timeit

import numpy as np

from ibgen import kernels
from ibgen._accel import NUMBA_AVAILABLE


def cases(rng):
    # probes x atoms for the induced decoder: 64 cells x 72 probes x 64 MC draws vs 2197 reference atoms
    u = rng.normal(size=(4096, 2))
    mu = rng.normal(size=(2197, 2))
    var = rng.uniform(0.1, 2.0, size=(2197, 2))
    logq = rng.normal(size=(4096, 2197)) * 5
    logw = np.log(rng.dirichlet(np.ones(2197 * 2)).reshape(2197, 2))
    grid = rng.normal(size=(4096, 2))
    mu_p, var_p = rng.normal(size=(600, 2)), rng.uniform(0.1, 2.0, size=(600, 2))
    return {
        "gauss_logpdf_matrix": ((u, mu, var), kernels.gauss_logpdf_matrix_np, getattr(kernels, "_gauss_logpdf_matrix_nb", None)),
        "class_logsumexp": ((logq, logw), kernels.class_logsumexp_np, getattr(kernels, "_class_logsumexp_nb", None)),
        "density_gap_max": (
            (grid, mu_p, var_p, mu_p[0], var_p[0]),
            kernels.density_gap_max_np,
            getattr(kernels, "_density_gap_max_nb", None),
        ),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, (inputs, f_np, f_nb) in cases(rng).items():
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat))
        if NUMBA_AVAILABLE and f_nb is not None:
            f_nb(*inputs)  # compile
            t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat))
            np.testing.assert_allclose(np.asarray(f_nb(*inputs)), np.asarray(f_np(*inputs)), rtol=1e-10, atol=1e-10)
            print(f"{name:<22}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<22}{t_np:>10.4f}{'n/a':>10}{'':>9}")


if __name__ == "__main__":
    main()
