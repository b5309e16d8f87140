"""Acceptance suite: the twelve release criteria at their stated sizes and tolerances.

Each test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. Run alone with ``pytest tests/test_acceptance.py``.
"""

import itertools
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import dense_bfgs_inverse, record_criterion
from stochlbfgs import theory as th
from stochlbfgs.distributed import (
    PHASES,
    distributed_recursion_round,
    expected_phase_counts,
    shard_batch,
    sharded_ggn_vec,
    tree_depth,
)
from stochlbfgs.memory import LbfgsMemory
from stochlbfgs.optimizer import (
    DivergedError,
    OptimizerConfig,
    StochasticLBFGS,
    run,
    solve_full_batch,
)
from stochlbfgs.preconditioner import DiagonalH0
from stochlbfgs.problems import (
    LeastSquares,
    LogisticRegression,
    MLPClassifier,
    sample_batch,
    synth_dataset,
)
from stochlbfgs.two_loop import classic_two_loop, vector_free_two_loop

pytestmark = pytest.mark.acceptance

# shared desk-scale problem for criteria 10 and 11
PLATEAU_PROBLEM = dict(kind="logistic", n=1000, d=20, seed=0, noise=1.0)


def rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_instance(rng, d, m):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A = Q @ np.diag(np.geomspace(1.0, 1e3, d)) @ Q.T
    mem = LbfgsMemory(max(m, 1))
    for _ in range(m):
        s = rng.standard_normal(d)
        mem.push(s, A @ s)
    return mem


@pytest.fixture(scope="module")
def plateau_problem():
    p = PLATEAU_PROBLEM
    problem = LogisticRegression(synth_dataset(p["kind"], p["n"], p["d"], seed=p["seed"],
                                               noise=p["noise"]))
    _, f_star, gnorm, ok = solve_full_batch(problem)
    assert ok and gnorm <= 1e-10
    return problem, f_star


def test_c01_recursion_equivalence():
    rng = np.random.default_rng(1)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        d, m = int(rng.integers(1, 51)), int(rng.integers(0, 11))
        mem = random_instance(rng, d, m)
        h0 = DiagonalH0(rng.uniform(1e-2, 1e2, d), 1e-8)
        g = rng.standard_normal(d)
        worst = max(worst, rel(vector_free_two_loop(mem, g, h0).direction,
                               classic_two_loop(mem, g, h0)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5.0
    record_criterion(1, "recursion equivalence", ok,
                     f"max rel err {worst:.2e} (<= 1e-10), 1000 cases in {elapsed:.2f}s (< 5s)")
    assert ok


def test_c02_dense_bfgs_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(500):
        d, m = int(rng.integers(1, 7)), int(rng.integers(0, 4))
        mem = random_instance(rng, d, m)
        diag = rng.uniform(0.1, 10.0, d)
        h0 = DiagonalH0(diag ** -2, 0.0)  # 1/sqrt(v) = diag
        g = rng.standard_normal(d)
        expected = -dense_bfgs_inverse(mem, np.diag(h0.diag)) @ g
        worst = max(worst, rel(classic_two_loop(mem, g, h0), expected),
                    rel(vector_free_two_loop(mem, g, h0).direction, expected))
    ok = worst <= 1e-12
    record_criterion(2, "dense BFGS oracle", ok, f"max rel err {worst:.2e} (<= 1e-12), 500 cases")
    assert ok


def test_c03_oracle_consistency():
    rng = np.random.default_rng(3)
    problems = [
        LogisticRegression(synth_dataset("logistic", 60, 8, seed=3, noise=0.5)),
        LeastSquares(synth_dataset("least_squares", 60, 8, seed=3, noise=0.5), reg=0.01),
        MLPClassifier(synth_dataset("mlp", 60, 6, seed=3), hidden=8, reg=1e-3),
    ]
    eps = 1e-5
    worst = {}
    for p in problems:
        errs = []
        for _ in range(100):
            w = p.initial_point(rng) + rng.standard_normal(p.dim)
            v = rng.standard_normal(p.dim)
            S = sample_batch(p.n, int(rng.integers(1, p.n + 1)), rng)
            fd = (p.batch_gradient(w + eps * v, S) - p.batch_gradient(w - eps * v, S)) / (2 * eps)
            errs.append(rel(p.hessian_vec(w, S, v), fd))
        worst[p.kind] = max(errs)
    ok = max(worst.values()) <= 1e-5
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_criterion(3, "oracle consistency", ok, f"max rel err {detail} (<= 1e-5)")
    assert ok


def test_c04_ggn_equals_hessian():
    rng = np.random.default_rng(4)
    problems = [
        LeastSquares(synth_dataset("least_squares", 50, 7, seed=4, noise=0.3), reg=0.01),
        LogisticRegression(synth_dataset("logistic", 50, 7, seed=4, noise=0.3)),
        MLPClassifier(synth_dataset("softmax", 50, 5, seed=4), hidden=0, reg=0.01),
    ]
    worst = 0.0
    for p in problems:
        for _ in range(50):
            w, v = rng.standard_normal(p.dim), rng.standard_normal(p.dim)
            S = sample_batch(p.n, int(rng.integers(1, p.n + 1)), rng)
            worst = max(worst, rel(p.ggn_vec(w, S, v), p.hessian_vec(w, S, v)))
    ok = worst <= 1e-10
    record_criterion(4, "GGN = Hessian (linear predictors)", ok,
                     f"max rel err {worst:.2e} (<= 1e-10) for least squares, logistic, softmax")
    assert ok


def test_c05_sharding_transparency():
    rng = np.random.default_rng(5)
    problems = [
        LeastSquares(synth_dataset("least_squares", 80, 9, seed=5), reg=0.01),
        LogisticRegression(synth_dataset("logistic", 80, 9, seed=5)),
        MLPClassifier(synth_dataset("mlp", 80, 5, seed=5), hidden=4, ggn_mode="probabilities"),
    ]
    worst_ggn = 0.0
    for p in problems:
        for _ in range(10):
            w, v = p.initial_point(rng) + rng.standard_normal(p.dim), rng.standard_normal(p.dim)
            S = sample_batch(p.n, int(rng.integers(8, p.n + 1)), rng)
            mono = p.ggn_vec(w, S, v)
            for tau in (1, 2, 4, 8):
                worst_ggn = max(worst_ggn, rel(sharded_ggn_vec(shard_batch(S, tau), p, w, v), mono))
    worst_rec = 0.0
    for _ in range(200):
        d, m = int(rng.integers(1, 40)), int(rng.integers(0, 8))
        mem = random_instance(rng, d, m)
        h0 = DiagonalH0(rng.uniform(1e-2, 1e2, d))
        g = rng.standard_normal(d)
        local = vector_free_two_loop(mem, g, h0).direction
        for tau, placement in ((1, "round-robin"), (4, "round-robin"), (8, "coordinate"),
                               (max(m * (m + 1), 1), "per-dot-product")):
            res = distributed_recursion_round(mem, g, h0, tau, placement=placement)
            worst_rec = max(worst_rec, rel(res.direction, local))
    ok = worst_ggn <= 1e-10 and worst_rec <= 1e-10
    record_criterion(5, "sharding transparency", ok,
                     f"ggn max rel err {worst_ggn:.1e}, recursion {worst_rec:.1e} (<= 1e-10)")
    assert ok


def _round_counts(problem, d, tau, m, capacity=None):
    """Per-phase scalars of one optimizer round with exactly m stored pairs."""
    capacity = m if capacity is None else capacity
    cfg = OptimizerConfig(variant="lbfgs-h", memory=capacity, batch_size=64, lr=0.01,
                          workers=tau)
    opt = StochasticLBFGS(problem, cfg)
    while len(opt.memory) < m:
        opt.step()
    before = {p: opt.ledger.phase_total(p) for p in PHASES}
    opt.step()
    return {p: opt.ledger.phase_total(p) - before[p] for p in PHASES}


def test_c06_communication_ledger():
    mismatches, over_bound, cases = [], [], 0
    for d in (5, 20, 50):
        problem = LogisticRegression(synth_dataset("logistic", 200, d, seed=6, noise=0.5))
        for tau, m in itertools.product((2, 3, 4, 8, 16, 64), (0, 1, 3, 5, 10)):
            rounds = [(_round_counts(problem, d, tau, m), expected_phase_counts(d, tau, m))]
            if m == 0:
                # first round of a non-empty memory, and memory disabled (no curvature phase)
                rounds = [(_round_counts(problem, d, tau, 0, capacity=5),
                           expected_phase_counts(d, tau, 0)),
                          (_round_counts(problem, d, tau, 0),
                           expected_phase_counts(d, tau, 0, phases=("gradient", "recursion")))]
            for counts, expected in rounds:
                cases += 1
                if {k: counts[k] for k in expected} != expected or any(
                        counts[k] for k in counts if k not in expected):
                    mismatches.append((d, tau, m, counts, expected))
                if sum(counts.values()) > 8 * (d * tree_depth(tau) + m * m):
                    over_bound.append((d, tau, m, sum(counts.values())))
    ok = not mismatches and not over_bound
    record_criterion(6, "communication ledger", ok,
                     f"{cases} (d, tau, m) rounds: {len(mismatches)} formula mismatches, "
                     f"{len(over_bound)} above 8(d log2 tau + m^2)")
    assert ok, (mismatches[:3], over_bound[:3])


def _plain_adam(problem, w0, lr, b, seed, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    rng = np.random.default_rng(seed)
    w, m, v = w0.copy(), np.zeros_like(w0), np.zeros_like(w0)
    out = []
    for k in range(1, steps + 1):
        g = problem.batch_gradient(w, sample_batch(problem.n, b, rng))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w = w - lr * (m / (1 - beta1 ** k)) / (np.sqrt(v / (1 - beta2 ** k)) + eps)
        out.append(w)
    return out


def test_c07_adam_recovery():
    problem = LogisticRegression(synth_dataset("logistic", 500, 10, seed=7, noise=0.5))
    worst = 0.0
    for seed in range(5):
        cfg = OptimizerConfig(variant="lbfgs-h", memory=0, batch_size=32, lr=0.01, seed=seed)
        opt = StochasticLBFGS(problem, cfg)
        ref = _plain_adam(problem, opt.w, 0.01, 32, seed, 100)
        for w_ref in ref:
            opt.step()
            worst = max(worst, float(np.max(np.abs(opt.w - w_ref))))
    ok = worst <= 1e-10
    record_criterion(7, "ADAM recovery", ok,
                     f"max iterate deviation {worst:.1e} (<= 1e-10) over 100 steps x 5 seeds")
    assert ok


def test_c08_eigenvalue_bounds():
    logistic = LogisticRegression(synth_dataset("logistic", 300, 10, seed=8, noise=0.5))
    cfg = OptimizerConfig(variant="lbfgs-h", memory=5, batch_size=30, lr=0.05, seed=8)
    trace = th.collect_eigen_trace(logistic, cfg, 200)
    eig = th.check_eigen_bounds(trace, slack=1e-8)
    pairs = th.check_pair_inequalities(trace, slack=1e-8)
    mlp = MLPClassifier(synth_dataset("mlp", 300, 6, seed=8, noise=0.5), hidden=6)
    cautious_reports = []
    for seed in range(3):
        mcfg = OptimizerConfig(variant="lbfgs-f", memory=5, batch_size=30, lr=0.02, seed=seed)
        mtrace = th.collect_eigen_trace(mlp, mcfg, 200)
        cautious_reports.append(th.check_pair_inequalities(mtrace, cautious=True, slack=1e-8))
    n_pairs = sum(r.details["pairs"] for r in cautious_reports)
    ok = eig.passed and pairs.passed and all(r.passed for r in cautious_reports)
    record_criterion(8, "eigenvalue bounds", ok,
                     f"{len(trace.snapshots)} iterates, {len(eig.violations)} bound violations "
                     f"(min rel gap {eig.margin:.2e}); logistic pairs ok={pairs.passed}; "
                     f"{n_pairs} cautious MLP pairs ok="
                     f"{all(r.passed for r in cautious_reports)}")
    assert ok


def test_c09_exhaustive_sampling_bounds():
    rng = np.random.default_rng(9)
    var_fail, grad_fail, checks = 0, 0, 0
    for _ in range(50):
        n = int(rng.integers(2, 9))
        xi = rng.standard_normal((n, 3)) * rng.uniform(0.1, 10) + rng.standard_normal(3)
        for b in range(1, n + 1):
            checks += 1
            var_fail += not th.check_variance_bound(xi, b).passed
    for i in range(50):
        n = int(rng.integers(2, 9))
        if i % 2:
            p = LeastSquares(synth_dataset("least_squares", n, 3, seed=100 + i, noise=0.5),
                             reg=float(rng.uniform(0.01, 1.0)))
            w_star = p.solve()
            lam = float(np.linalg.eigvalsh(p.hessian_matrix(w_star))[0])
        else:
            p = LogisticRegression(synth_dataset("logistic", n, 3, seed=100 + i, noise=0.5),
                                   reg=float(rng.uniform(0.01, 1.0)))
            w_star, *_ = solve_full_batch(p, tol=1e-13)
            lam = p.reg
        Lam = th.component_smoothness(p)
        ws = w_star + rng.standard_normal((4, 3)) * rng.uniform(0.1, 3.0)
        for b in range(1, n + 1):
            checks += 1
            grad_fail += not th.check_batch_gradient_bound(p, ws, b, w_star, lam, Lam).passed
    anti = th.check_variance_bound(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1)
    equality = anti.details["lhs"] == anti.details["rhs"] == 1.0
    ok = var_fail == 0 and grad_fail == 0 and equality
    record_criterion(9, "exhaustive sampling bounds", ok,
                     f"{checks} (instance, b) checks: {var_fail} variance and {grad_fail} "
                     f"batch-gradient failures; antipodal n=2,b=1 equality={equality}")
    assert ok


def test_c10_convergence_plateau(plateau_problem):
    problem, f_star = plateau_problem
    start = time.perf_counter()
    alpha = 0.1
    family = th.plateau_family(problem, {"variant": "lbfgs-h", "batch_size": 64, "memory": 10},
                               [alpha, alpha / 4], range(20), 40, f_star)
    report = th.check_plateau_monotone(family, min_seeds=20)
    full = run(problem, OptimizerConfig(variant="lbfgs-h", batch_size=problem.n, lr=0.05),
               300, f_star=f_star)
    sub = np.maximum(np.asarray(full.subopt), 0.0)
    reached = int(np.argmax(sub <= 1e-10)) if np.any(sub <= 1e-10) else None
    # geometric: every 50-epoch window above tolerance shrinks the gap by 10x or more
    windows = [sub[k + 50] / sub[k] for k in range(0, len(sub) - 50, 50) if sub[k] > 1e-10]
    geometric = bool(windows) and max(windows) <= 0.1
    elapsed = time.perf_counter() - start
    plat = report.details["plateaus"]
    ok = report.passed and reached is not None and geometric and elapsed < 120
    record_criterion(10, "convergence plateau", ok,
                     f"plateau(a={alpha})={plat[repr(alpha)]:.2e} > plateau(a/4)="
                     f"{plat[repr(alpha / 4)]:.2e}, p={report.details['quarter_tests'][0]['p_value']:.1e}"
                     f" over 20 seeds; b=n reaches {sub[-1]:.1e} (<= 1e-10 at epoch {reached}), "
                     f"worst 50-epoch ratio {max(windows):.1e}; {elapsed:.0f}s (< 120s)")
    assert ok


def test_c11_desk_scale_performance(plateau_problem):
    problem, f_star = plateau_problem
    best = []
    for seed in range(5):
        rec = run(problem, OptimizerConfig(variant="lbfgs-h", batch_size=64, lr=0.005,
                                           seed=seed), 30, f_star=f_star)
        best.append(min(rec.subopt))
    reaches = max(best) <= 1e-3
    ratios, skip_h, skip_s = [], [], []
    for seed in range(5):
        h = run(problem, OptimizerConfig(variant="lbfgs-h", batch_size=16, lr=0.005, seed=seed),
                30, f_star=f_star)
        try:
            s = run(problem, OptimizerConfig(variant="lbfgs-s", batch_size=16, lr=0.005,
                                             seed=seed), 30, f_star=f_star)
            s_plateau, s_skips = th.plateau(s.subopt), s.skips[-1]
        except DivergedError as err:
            # a run stopped by the divergence guard has no finite plateau
            s_plateau, s_skips = np.inf, err.record.skips[-1]
        ratios.append(s_plateau / th.plateau(h.subopt))
        skip_h.append(h.skips[-1])
        skip_s.append(s_skips)
    unstable = [r >= 10 or ss >= 10 * max(sh, 1) for r, sh, ss in zip(ratios, skip_h, skip_s)]
    ok = reaches and all(unstable)
    record_criterion(11, "desk-scale performance", ok,
                     f"LBFGS-H best sub-optimality within 30 epochs {max(best):.1e} (<= 1e-3, "
                     f"worst of 5 seeds); LBFGS-S vs LBFGS-H at b=16: plateau ratios "
                     f"{['inf' if not np.isfinite(r) else f'{r:.0f}' for r in ratios]}, "
                     f"skips {skip_s} vs {skip_h}")
    assert ok


CONFIG = """
epochs = 3
seeds = [0, 1]

[problem]
kind = "logistic"

[problem.synth]
n = 400
d = 10
noise = 1.0

[optimizer]
variants = ["lbfgs-h", "lbfgs-f", "lbfgs-s", "adam", "sgd", "adagrad", "lbfgs"]
lr = [0.01]
batch_size = [32]
memory = [5]
"""


def test_c12_determinism(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(CONFIG)
    outs = []
    for tag in ("first", "second"):
        out = tmp_path / tag
        proc = subprocess.run([sys.executable, "-m", "stochlbfgs", "run", str(cfg), "--out",
                               str(out), "--quiet"], capture_output=True, text=True)
        assert proc.returncode in (0, 2), proc.stderr
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    ok = len(files) == 7 * 2 + 1 and all(same)
    record_criterion(12, "determinism", ok,
                     f"{sum(same)}/{len(files)} CSV files byte-identical across two invocations")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
