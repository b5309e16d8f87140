import numpy as np
import pytest

from conftest import dense_bfgs_inverse, spd_memory
from stochlbfgs import theory as th
from stochlbfgs.memory import LbfgsMemory
from stochlbfgs.optimizer import OptimizerConfig, run, solve_full_batch
from stochlbfgs.preconditioner import DiagonalH0, ScalarH0
from stochlbfgs.problems import (
    Dataset,
    LeastSquares,
    LogisticRegression,
    MLPClassifier,
    synth_dataset,
)


@pytest.fixture(scope="module")
def logistic10():
    return LogisticRegression(synth_dataset("logistic", 200, 10, seed=1, noise=0.5))


def test_beta():
    assert th.beta(10, 10) == 0.0
    assert th.beta(10, 1) == 1.0
    assert th.beta(5, 2) == pytest.approx(3 / 8)
    with pytest.raises(ValueError):
        th.beta(3, 4)


def test_materialize_h_trivial_cases():
    assert np.array_equal(th.materialize_h(LbfgsMemory(2), ScalarH0(3.0), 4), 3.0 * np.eye(4))
    mem = LbfgsMemory(1)
    mem.push([1.0, 0.0], [1.0, 0.0])
    assert np.allclose(th.materialize_h(mem, ScalarH0(1.0), 2), np.eye(2))


@pytest.mark.parametrize("seed", range(5))
def test_materialize_h_symmetric_and_matches_dense(seed):
    rng = np.random.default_rng(seed)
    mem = spd_memory(rng, 8, 4)
    h0 = DiagonalH0(rng.uniform(0.5, 3.0, 8))
    H = th.materialize_h(mem, h0, 8)
    assert np.max(np.abs(H - H.T)) <= 1e-9
    assert np.allclose(H, dense_bfgs_inverse(mem, h0.matrix()), rtol=1e-12, atol=1e-12)
    assert np.allclose(th.materialize_b(mem, h0, 8) @ H, np.eye(8), atol=1e-8)


def test_constants_validation():
    with pytest.raises(ValueError):
        th.TheoryConstants(d=2, m=1, lam_hat=0.0, Lam_hat=1.0, sigma=1.0, Sigma=1.0)
    with pytest.raises(ValueError):
        th.TheoryConstants(d=2, m=1, lam_hat=2.0, Lam_hat=1.0, sigma=1.0, Sigma=1.0)
    c = th.TheoryConstants(d=3, m=2, lam_hat=0.5, Lam_hat=2.0, sigma=0.25, Sigma=4.0,
                           lam=0.1, Lam=1.0, n=10)
    assert c.C1 == 3 / 0.25 + 2 * 2.0
    assert c.kappa == pytest.approx(10.0)
    assert np.isclose(np.log(c.mu2), c.log_mu2)
    # noisier batches (larger beta) shrink the admissible step
    assert 0 < c.admissible_step(1) < c.admissible_step(10)


def test_eigen_bounds_memoryless_identity(logistic10):
    cfg = OptimizerConfig(variant="lbfgs-h", memory=0, batch_size=20, lr=0.05,
                          preconditioner="identity")
    trace = th.collect_eigen_trace(logistic10, cfg, 10)
    rep = th.check_eigen_bounds(trace)
    assert rep.passed
    assert rep.details["H_eig_min"] == 1.0 and rep.details["H_eig_max"] == 1.0


@pytest.mark.parametrize("pre", ["adam", "identity", "scalar"])
def test_eigen_bounds_hold_on_logistic(logistic10, pre):
    cfg = OptimizerConfig(variant="lbfgs-h", memory=5, batch_size=20, lr=0.05,
                          preconditioner=pre)
    trace = th.collect_eigen_trace(logistic10, cfg, 200)
    rep = th.check_eigen_bounds(trace)
    assert rep.passed, rep.violations[:3]
    c = rep.details["constants"]
    # trace bound is strict: the BFGS update removes |Bs|^2 / s.Bs each time
    assert rep.margin > 0 and c["C1"] > 0
    assert th.check_pair_inequalities(trace).passed


def test_eigen_bounds_report_violations(logistic10):
    cfg = OptimizerConfig(variant="lbfgs-h", memory=5, batch_size=20, lr=0.05)
    trace = th.collect_eigen_trace(logistic10, cfg, 30)
    good = th.constants_from_trace(trace)
    wrong = th.TheoryConstants(d=good.d, m=good.m, lam_hat=good.lam_hat * 0.9,
                               Lam_hat=good.lam_hat, sigma=good.Sigma, Sigma=good.Sigma)
    rep = th.check_eigen_bounds(trace, wrong)
    assert not rep.passed
    assert {"step", "bound", "gap"} <= set(rep.violations[0])


def test_cautious_pairs_on_mlp():
    p = MLPClassifier(synth_dataset("mlp", 200, 5, seed=2, noise=0.5), hidden=4)
    cfg = OptimizerConfig(variant="lbfgs-f", memory=5, batch_size=20, lr=0.05)
    trace = th.collect_eigen_trace(p, cfg, 150)
    assert th.check_pair_inequalities(trace, cautious=True).passed
    assert th.check_eigen_bounds(trace, cautious=True).passed


def test_variance_full_batch_is_zero(rng):
    rep = th.check_variance_bound(rng.standard_normal((5, 2)), 5)
    assert rep.passed and abs(rep.details["lhs"]) <= 1e-30 and rep.details["rhs"] == 0.0


def test_variance_antipodal_equality():
    rep = th.check_variance_bound(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1)
    assert rep.details["lhs"] == 1.0 and rep.details["rhs"] == 1.0 and rep.passed


@pytest.mark.parametrize("n", range(2, 9))
def test_variance_random_all_b(rng, n):
    for _ in range(5):
        xi = rng.standard_normal((n, 3)) + rng.standard_normal(3)
        for b in range(1, n + 1):
            assert th.check_variance_bound(xi, b).passed


def test_variance_limits_enumeration():
    with pytest.raises(ValueError):
        th.check_variance_bound(np.zeros((11, 1)), 2)


def _small_ls(seed, noise=0.5, reg=0.1, n=6, d=3):
    return LeastSquares(synth_dataset("least_squares", n, d, seed=seed, noise=noise), reg=reg)


def test_batch_gradient_interpolation():
    p = _small_ls(0, noise=0.0, reg=0.0)
    w_star = p.data.meta["planted"]
    rep = th.check_batch_gradient_bound(p, [w_star], 2, w_star, lam=0.1, Lam=th.component_smoothness(p))
    assert rep.passed and rep.details["N"] == pytest.approx(0.0, abs=1e-25)


@pytest.mark.parametrize("seed", range(5))
def test_batch_gradient_bound_least_squares_grid(seed):
    p = _small_ls(seed)
    w_star = p.solve()
    lam = float(np.linalg.eigvalsh(p.hessian_matrix(w_star))[0])
    Lam = th.component_smoothness(p)
    grid = w_star + np.array(np.meshgrid(*[np.linspace(-2, 2, 3)] * 3)).reshape(3, -1).T
    for b in range(1, 7):
        rep = th.check_batch_gradient_bound(p, grid, b, w_star, lam, Lam)
        assert rep.passed, rep.violations[:2]


def test_batch_gradient_full_batch_reduces_to_gradient(rng):
    p = _small_ls(3)
    w_star = p.solve()
    w = w_star + rng.standard_normal(3)
    rep = th.check_batch_gradient_bound(p, [w], 6, w_star, 0.1, th.component_smoothness(p))
    assert rep.passed and rep.details["beta"] == 0.0


def test_component_smoothness_logistic():
    p = LogisticRegression(Dataset(np.array([[2.0, 0.0], [0.0, 1.0]]), np.array([1, -1])), reg=0.5)
    assert th.component_smoothness(p) == pytest.approx(0.25 * 4 + 0.5)


def test_plateau_helper():
    assert th.plateau([5, 5, 5, 5, 1]) == 1.0
    assert th.plateau(np.arange(10.0)) == pytest.approx(8.5)


def _family(rng, alphas, seeds, scale=1.0):
    return {a: [scale * a * (1 + 0.1 * rng.standard_normal(50)) ** 2 for _ in range(seeds)]
            for a in alphas}


def test_plateau_monotone_synthetic(rng):
    rep = th.check_plateau_monotone(_family(rng, [0.1, 0.025], 20))
    assert rep.passed and not rep.inconclusive
    assert rep.details["quarter_tests"][0]["ratio"] > 1


def test_plateau_monotone_detects_reversal(rng):
    fam = _family(rng, [0.1, 0.025], 20)
    fam[0.1], fam[0.025] = fam[0.025], fam[0.1]
    assert th.check_plateau_monotone(fam).status == "fail"


def test_plateau_monotone_inconclusive_with_few_seeds(rng):
    rep = th.check_plateau_monotone(_family(rng, [0.1, 0.025], 5))
    assert rep.status == "inconclusive" and not rep.passed


def test_decay_rate_synthetic():
    k = np.arange(1, 200) * 10.0
    assert th.check_decay_rate(k, 3.0 / (k + 50), 50).passed
    assert not th.check_decay_rate(k, 3.0 / np.sqrt(k + 50), 50).passed
    rep = th.check_decay_rate(k, 3.0 / (k + 50), 50)
    assert rep.details["G_hat"] == pytest.approx(3.0)


def test_decay_rate_real_run():
    p = LogisticRegression(synth_dataset("logistic", 1000, 20, seed=0, noise=1.0))
    _, f_star, _, _ = solve_full_batch(p)
    curves = [run(p, OptimizerConfig(lr=2.0, schedule="decaying", decay_offset=200.0,
                                     batch_size=64, seed=s), 100, f_star=f_star).subopt
              for s in range(5)]
    steps = np.arange(101) * 16
    rep = th.check_decay_rate(steps, np.mean(curves, axis=0), 200.0)
    assert rep.passed, rep.details


def test_nonconvex_plateau_synthetic(rng):
    fam = {a: [np.sqrt(a) * (1 + 0.05 * rng.standard_normal(40)) for _ in range(20)]
           for a in (0.2, 0.05)}
    assert th.check_nonconvex_plateau(fam).passed


def test_admissible_alpha_report():
    c = th.TheoryConstants(d=2, m=1, lam_hat=1.0, Lam_hat=1.0, sigma=1.0, Sigma=1.0,
                           lam=1.0, Lam=1.0, n=10)
    upper = c.admissible_step(10)
    assert th.check_admissible_alpha(upper / 2, c, 10).passed
    rep = th.check_admissible_alpha(upper * 2, c, 10)
    assert not rep.passed and rep.details["empirical"]


def test_estimate_constants(logistic10):
    w, *_ = solve_full_batch(logistic10)
    c = th.estimate_constants(logistic10, w, b=20, m=5, rng=0, visited=[w, w + 0.1])
    assert 0 < c.lam <= c.Lam and 0 < c.lam_hat <= c.Lam_hat
    assert c.N > 0 and c.eta >= 0


def test_report_serialises():
    rep = th.CheckReport("x", True, 0.5, {"a": 1})
    assert rep.as_dict()["status"] == "pass" and "x: pass" in rep.line()
