"""Numerical checks of the convergence theory on small problems.

1. Spectral bounds: the trace, determinant and eigenvalue bounds on the
   L-BFGS matrices along a real trajectory.
2. Sampling bounds: the without-replacement variance identity checked over
   every subset of a small data set.
3. Step-size behaviour: the constant-step plateau shrinks with the step
   size, and a 1/(k+E) schedule gives an O(1/k) decay.

    python demos/theory_checks.py
"""

import numpy as np

from stochlbfgs import LogisticRegression, OptimizerConfig, run, solve_full_batch, synth_dataset
from stochlbfgs import theory as th


def main():
    problem = LogisticRegression(synth_dataset("logistic", n=300, d=10, seed=8, noise=0.5))
    cfg = OptimizerConfig(variant="lbfgs-h", memory=5, batch_size=30, lr=0.05, seed=8)
    trace = th.collect_eigen_trace(problem, cfg, 200)
    consts = th.constants_from_trace(trace)
    print("constants from the trajectory:")
    for key in ("sigma", "Sigma", "lam_hat", "Lam_hat"):
        print(f"  {key:<8} {getattr(consts, key):.4g}")
    print(f"  C1 = {consts.C1:.4g}, mu1 = {consts.mu1:.4g}, log mu2 = {consts.log_mu2:.4g}")
    print(th.check_eigen_bounds(trace, consts).line())
    print(th.check_pair_inequalities(trace, consts).line())

    rng = np.random.default_rng(0)
    xi = rng.standard_normal((7, 3))
    worst = min(th.check_variance_bound(xi, b).margin for b in range(1, 8))
    print(f"\nvariance bound over all subsets, n = 7, b = 1..7: smallest slack {worst:.2e}")

    big = LogisticRegression(synth_dataset("logistic", n=1000, d=20, seed=0, noise=1.0))
    _, f_star, *_ = solve_full_batch(big)
    family = th.plateau_family(big, {"variant": "lbfgs-h", "batch_size": 64, "memory": 10},
                               [0.1, 0.025], range(20), 40, f_star)
    print("\n" + th.check_plateau_monotone(family).line())

    # a single seed is noisy; the rate is read off the seed-averaged curve
    curves = []
    for seed in range(5):
        cfg = OptimizerConfig(variant="lbfgs-h", batch_size=64, lr=2.0, schedule="decaying",
                              decay_offset=200.0, seed=seed)
        curves.append(run(big, cfg, 100, f_star=f_star).subopt)
    steps = np.arange(101) * (big.n // 64)
    rep = th.check_decay_rate(steps, np.mean(curves, axis=0), E=200.0)
    print(f"{rep.line()}, log-log slope {rep.details['slope']:.2f}")


if __name__ == "__main__":
    main()
