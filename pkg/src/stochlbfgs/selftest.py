"""Fast in-process invariant suites behind ``stochlbfgs selftest``.

Each suite draws a few random instances and returns a CheckReport with the
worst observed error as margin. The full-size versions live in the test
suite; these are sized to finish in a few seconds.
"""

import numpy as np

from .distributed import (
    CommLedger,
    distributed_recursion_round,
    expected_phase_counts,
    shard_batch,
    sharded_ggn_vec,
)
from .memory import LbfgsMemory
from .optimizer import OptimizerConfig, StochasticLBFGS
from .preconditioner import AdamState, DiagonalH0
from .problems import LeastSquares, LogisticRegression, MLPClassifier, synth_dataset
from .theory import CheckReport, check_variance_bound
from .two_loop import classic_two_loop, vector_free_two_loop


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_memory(rng, d, m):
    """Memory of ``m`` pairs with y = A s for a random SPD A."""
    Q = rng.standard_normal((d, d))
    A = Q @ Q.T + d * np.eye(d)
    mem = LbfgsMemory(max(m, 1))
    for _ in range(m):
        s = rng.standard_normal(d)
        mem.push(s, A @ s)
    return mem


def suite_recursion(rng, cases=100):
    worst = 0.0
    for _ in range(cases):
        d, m = int(rng.integers(1, 30)), int(rng.integers(0, 8))
        mem = random_memory(rng, d, m)
        h0 = DiagonalH0(rng.uniform(0.1, 10.0, d) ** 2, 0.0)
        g = rng.standard_normal(d)
        worst = max(worst, _rel(vector_free_two_loop(mem, g, h0).direction,
                                classic_two_loop(mem, g, h0)))
    return CheckReport("recursion_equivalence", worst <= 1e-10, worst)


def _problems(rng):
    ls = LeastSquares(synth_dataset("least_squares", 30, 5, seed=int(rng.integers(1 << 30))),
                      reg=0.1)
    lr = LogisticRegression(synth_dataset("logistic", 30, 5, seed=int(rng.integers(1 << 30))))
    mlp = MLPClassifier(synth_dataset("mlp", 30, 4, seed=int(rng.integers(1 << 30))), hidden=3)
    return ls, lr, mlp


def suite_oracles(rng, cases=10, eps=1e-5):
    worst = 0.0
    for p in _problems(rng):
        for _ in range(cases):
            w = p.initial_point(rng) + 0.5 * rng.standard_normal(p.dim)
            v = rng.standard_normal(p.dim)
            S = np.sort(rng.choice(p.n, size=int(rng.integers(1, p.n + 1)), replace=False))
            fd = (p.batch_gradient(w + eps * v, S) - p.batch_gradient(w - eps * v, S)) / (2 * eps)
            worst = max(worst, _rel(p.hessian_vec(w, S, v), fd))
    return CheckReport("hessian_vec_vs_finite_differences", worst <= 1e-5, worst)


def suite_ggn_identity(rng, cases=10):
    worst = 0.0
    ls, lr, _ = _problems(rng)
    soft = MLPClassifier(synth_dataset("softmax", 30, 4, seed=int(rng.integers(1 << 30))), hidden=0)
    for p in (ls, lr, soft):
        for _ in range(cases):
            w, v = rng.standard_normal(p.dim), rng.standard_normal(p.dim)
            worst = max(worst, _rel(p.ggn_vec(w, None, v), p.hessian_vec(w, None, v)))
    return CheckReport("ggn_equals_hessian_linear", worst <= 1e-10, worst)


def suite_sharding(rng, cases=5):
    worst = 0.0
    p = LogisticRegression(synth_dataset("logistic", 40, 6, seed=int(rng.integers(1 << 30))))
    for _ in range(cases):
        w, v = rng.standard_normal(p.dim), rng.standard_normal(p.dim)
        S = np.sort(rng.choice(p.n, size=16, replace=False))
        mono = p.ggn_vec(w, S, v)
        for tau in (1, 2, 4, 8):
            worst = max(worst, _rel(sharded_ggn_vec(shard_batch(S, tau), p, w, v), mono))
        mem = random_memory(rng, p.dim, 4)
        h0 = DiagonalH0(rng.uniform(0.5, 2.0, p.dim), 1e-8)
        g = rng.standard_normal(p.dim)
        worst = max(worst, _rel(distributed_recursion_round(mem, g, h0, 4).direction,
                                vector_free_two_loop(mem, g, h0).direction))
    return CheckReport("sharding_transparency", worst <= 1e-10, worst)


def suite_ledger(rng):
    mismatches = 0
    for d, tau, m in ((10, 2, 3), (50, 4, 5), (20, 8, 0), (30, 16, 10)):
        led = CommLedger()
        distributed_recursion_round(random_memory(rng, d, m), rng.standard_normal(d),
                                    DiagonalH0(np.ones(d), 0.0), tau, led)
        mismatches += led.phase_total("recursion") != expected_phase_counts(d, tau, m)["recursion"]
    return CheckReport("ledger_formulas", mismatches == 0, float(-mismatches))


def suite_adam_recovery(rng, steps=50):
    p = LogisticRegression(synth_dataset("logistic", 50, 5, seed=int(rng.integers(1 << 30))))
    cfg = OptimizerConfig(variant="lbfgs-h", memory=0, batch_size=10, lr=0.05, seed=3)
    opt = StochasticLBFGS(p, cfg)
    w = opt.w.copy()
    adam = AdamState(p.dim)
    batch_rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(steps):
        opt.step()
        S = np.sort(batch_rng.choice(p.n, size=10, replace=False))
        w = w + 0.05 * adam.direction(*adam.update(p.batch_gradient(w, S)))
        worst = max(worst, float(np.max(np.abs(opt.w - w))))
    return CheckReport("adam_recovery", worst <= 1e-10, worst)


def suite_variance(rng, cases=10):
    margin = np.inf
    for _ in range(cases):
        n = int(rng.integers(2, 8))
        xi = rng.standard_normal((n, 3))
        for b in range(1, n + 1):
            margin = min(margin, check_variance_bound(xi, b).margin)
    return CheckReport("variance_bound", margin >= -1e-12, float(margin))


SUITES = (suite_recursion, suite_oracles, suite_ggn_identity, suite_sharding, suite_ledger,
          suite_adam_recovery, suite_variance)


def run_selftest(seed=0):
    rng = np.random.default_rng(seed)
    return [suite(rng) for suite in SUITES]
