"""Simulated map-reduce execution and its communication ledger.

One optimizer round on tau workers moves three kinds of traffic: the batch
gradient, the curvature product for the new pair, and the scalars of the
vector-free two-loop recursion. This script runs a short optimization on
the simulated executor and compares the measured per-round counts with the
closed forms and with the 8 (d log2 tau + m^2) budget.

    python demos/distributed_ledger.py
"""

import numpy as np

from stochlbfgs import (
    LogisticRegression,
    OptimizerConfig,
    StochasticLBFGS,
    run,
    synth_dataset,
)
from stochlbfgs.distributed import PHASES, expected_phase_counts, tree_depth


def one_round(problem, tau, m):
    cfg = OptimizerConfig(variant="lbfgs-h", memory=m, batch_size=64, lr=0.01, workers=tau)
    opt = StochasticLBFGS(problem, cfg)
    while len(opt.memory) < m:
        opt.step()
    before = {p: opt.ledger.phase_total(p) for p in PHASES}
    opt.step()
    return {p: opt.ledger.phase_total(p) - before[p] for p in PHASES}


def main():
    d, m = 50, 10
    problem = LogisticRegression(synth_dataset("logistic", n=2000, d=d, seed=1))
    print(f"d = {d}, m = {m}: scalars moved in one round\n")
    print(f"{'tau':>4}{'gradient':>10}{'curvature':>11}{'recursion':>11}{'total':>8}{'budget':>8}"
          "  matches closed form")
    for tau in (2, 4, 8, 16, 32):
        got = one_round(problem, tau, m)
        budget = 8 * (d * tree_depth(tau) + m * m)
        same = got == expected_phase_counts(d, tau, m)
        print(f"{tau:>4}{got['gradient']:>10}{got['curvature']:>11}{got['recursion']:>11}"
              f"{sum(got.values()):>8}{budget:>8}  {same}")

    # sharding does not change the iterates: same seed, different worker counts
    finals = []
    for tau in (0, 4, 16):
        cfg = OptimizerConfig(variant="lbfgs-h", memory=m, batch_size=64, lr=0.01, workers=tau)
        finals.append(run(problem, cfg, 5).w)
    drift = max(float(np.max(np.abs(w - finals[0]))) for w in finals)
    print(f"\nmax iterate difference between 0, 4 and 16 workers after 5 epochs: {drift:.1e}")


if __name__ == "__main__":
    main()
