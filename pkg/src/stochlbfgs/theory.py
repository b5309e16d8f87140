"""Numerical checks of the convergence theory at desk scale.

Everything here consumes run traces or small problems and returns
:class:`CheckReport` records; nothing modifies optimizer state. The checks
cover

* spectral bounds on the L-BFGS matrices (trace and determinant bounds on
  B_k = H_k^{-1}, hence mu1 I <= H_k <= mu2 I),
* per-pair curvature inequalities for the smoothed and the cautious pairs,
* the without-replacement variance bound and the batch-gradient bound,
  both by exact enumeration of every size-b subset,
* neighborhood behaviour of constant and decaying step sizes.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .optimizer import OptimizerConfig, StochasticLBFGS, run
from .two_loop import classic_two_loop

DEFAULT_SLACK = 1e-8
# exhaustive checks are exact up to summation roundoff
ROUNDOFF = 1e-12


def beta(n, b):
    """Variance shrinkage (n-b)/(b(n-1)) of a size-b batch drawn without replacement."""
    if not 1 <= b <= n:
        raise ValueError(f"need 1 <= b <= n, got b={b}, n={n}")
    if b == n:
        return 0.0
    return (n - b) / (b * (n - 1))


@dataclass
class CheckReport:
    name: str
    passed: bool
    margin: float = math.nan
    details: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    inconclusive: bool = False

    @property
    def status(self):
        if self.inconclusive:
            return "inconclusive"
        return "pass" if self.passed else "fail"

    def line(self):
        return f"{self.name}: {self.status} (margin {self.margin:.3g})"

    def as_dict(self):
        return {"name": self.name, "status": self.status, "passed": self.passed,
                "margin": self.margin, "details": self.details,
                "violations": self.violations[:20]}


@dataclass
class TheoryConstants:
    """Constants entering the bounds; ``None`` marks an unknown value.

    ``lam``/``Lam`` bound the spectrum of F (or of the components), the
    hatted pair bound the smoothing matrices, ``sigma``/``Sigma`` bound the
    initial scaling, ``m`` is the memory size and ``d`` the dimension.
    """

    d: int
    m: int
    lam_hat: float
    Lam_hat: float
    sigma: float
    Sigma: float
    lam: float = None
    Lam: float = None
    n: int = None
    N: float = None
    gamma: float = None
    eta: float = None
    epsilon: float = 1e-8
    alpha: float = None
    E: float = None

    def __post_init__(self):
        vals = [self.lam_hat, self.Lam_hat, self.sigma, self.Sigma]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"spectral constants must be positive and finite: {vals}")
        if self.lam_hat > self.Lam_hat * (1 + 1e-12) or self.sigma > self.Sigma * (1 + 1e-12):
            raise ValueError("need lam_hat <= Lam_hat and sigma <= Sigma")
        if self.lam is not None and not 0 < self.lam <= self.Lam * (1 + 1e-12):
            raise ValueError("need 0 < lam <= Lam")

    def beta(self, b):
        return beta(self.n, b)

    @property
    def kappa(self):
        return self.Lam / self.lam

    @property
    def C1(self):
        return self.d / self.sigma + self.m * self.Lam_hat

    @property
    def log_det_floor(self):
        """log of Sigma^{-d} (lam_hat / C1)^m, the floor on det(B_k)."""
        return -self.d * math.log(self.Sigma) + self.m * math.log(self.lam_hat / self.C1)

    @property
    def mu1(self):
        return 1.0 / self.C1

    @property
    def log_mu2(self):
        return ((self.d - 1) * math.log(self.C1) + self.d * math.log(self.Sigma)
                + self.m * math.log(self.C1 / self.lam_hat))

    @property
    def mu2(self):
        return math.exp(min(self.log_mu2, 700.0))

    def admissible_step(self, b):
        """Upper end of the constant step interval lam mu1 / (mu2^2 (lam + Lam beta) Lam)."""
        lg = (math.log(self.lam) + math.log(self.mu1) - 2 * self.log_mu2
              - math.log(self.lam + self.Lam * self.beta(b)) - math.log(self.Lam))
        return math.exp(max(lg, -745.0))

    def as_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out.update(C1=self.C1, mu1=self.mu1, log_mu2=self.log_mu2)
        return out


def _h0_matrix(h0, d):
    if hasattr(h0, "matrix"):
        return np.asarray(h0.matrix(d), dtype=float)
    eye = np.eye(d)
    return np.column_stack([h0(eye[:, j]) for j in range(d)])


def materialize_h(memory, h0, d):
    """Dense H_k, one column per basis vector via the two-loop recursion."""
    eye = np.eye(d)
    # classic_two_loop returns -H g, so g = -e_j yields column j of H
    return np.column_stack([classic_two_loop(memory, -eye[:, j], h0) for j in range(d)])


def materialize_b(memory, h0, d):
    """Dense B_k = H_k^{-1} by direct BFGS updates of inv(H0)."""
    B = np.linalg.inv(_h0_matrix(h0, d))
    for pair in memory:
        Bs = B @ pair.s
        B = B - np.outer(Bs, Bs) / float(pair.s @ Bs) + np.outer(pair.y, pair.y) / pair.ys
    return 0.5 * (B + B.T)


@dataclass
class EigenTrace:
    """Per-iterate snapshots of a stochastic L-BFGS run.

    ``snapshots`` holds ``(step, memory copy, h0)``; ``pairs`` holds
    ``(step, s, y, lmin, lmax)`` for every accepted pair, with the extreme
    eigenvalues of the batch curvature matrix that produced ``y`` (NaN when
    no such matrix exists, e.g. gradient-difference pairs).
    """

    d: int
    m: int
    epsilon: float
    variant: str
    snapshots: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    skipped: int = 0


def collect_eigen_trace(problem, config, steps, w0=None):
    """Run ``steps`` iterations of a stochastic L-BFGS variant and record snapshots."""
    opt = StochasticLBFGS(problem, config, w0)
    trace = EigenTrace(problem.dim, config.memory, config.epsilon, config.variant)
    kind = "ggn" if config.variant == "lbfgs-f" else "hessian"

    def grab(o, info):
        if info["accepted"]:
            if config.variant in ("lbfgs-h", "lbfgs-f"):
                w_at = info["w"] if config.curvature_point == "current" else info["w"] + info["s"]
                ev = np.linalg.eigvalsh(problem.hessian_matrix(w_at, info["batch"], kind))
                lo, hi = float(ev[0]), float(ev[-1])
            else:
                lo = hi = math.nan
            trace.pairs.append((info["step"], info["s"].copy(), info["y"].copy(), lo, hi))
        elif info["accepted"] is False:
            trace.skipped += 1
        trace.snapshots.append((info["step"], o.memory.copy(), info["h0"]))

    for _ in range(steps):
        opt.step(grab)
    return trace


def constants_from_trace(trace, cautious=False):
    """Empirical (lam_hat, Lam_hat, sigma, Sigma) over everything the run touched.

    With ``cautious=True`` the lower pair constant is the skip threshold
    epsilon, which is what the cautious rule guarantees on nonconvex problems.
    """
    diag = [np.diag(_h0_matrix(h0, trace.d)) for _, _, h0 in trace.snapshots]
    sigma = float(min(x.min() for x in diag))
    Sigma = float(max(x.max() for x in diag))
    lows = [p[3] for p in trace.pairs if np.isfinite(p[3])]
    highs = [p[4] for p in trace.pairs if np.isfinite(p[4])]
    if lows:
        lam_hat, Lam_hat = min(lows), max(highs)
        if cautious:
            lam_hat = trace.epsilon
    else:
        # no curvature matrices recorded: fall back to the pair ratios themselves
        ratios = [float(y @ s) / float(s @ s) for _, s, y, _, _ in trace.pairs] or [1.0]
        sq = [float(y @ y) / float(y @ s) for _, s, y, _, _ in trace.pairs] or [1.0]
        lam_hat, Lam_hat = min(ratios), max(sq)
        if cautious:
            lam_hat = trace.epsilon
    return TheoryConstants(d=trace.d, m=trace.m, lam_hat=lam_hat, Lam_hat=Lam_hat,
                           sigma=sigma, Sigma=Sigma, epsilon=trace.epsilon)


def _rel_gap(bound, value, upper=True):
    scale = max(1.0, abs(bound))
    return ((bound - value) if upper else (value - bound)) / scale


def check_eigen_bounds(trace, constants=None, slack=DEFAULT_SLACK, cautious=False):
    """Trace/determinant bounds on B_k and the resulting [mu1, mu2] range of H_k.

    The margin is the smallest relative gap over all iterates and bounds.
    """
    c = constants or constants_from_trace(trace, cautious)
    d = trace.d
    worst = math.inf
    violations = []
    eig_lo, eig_hi = math.inf, -math.inf
    for step, mem, h0 in trace.snapshots:
        H = materialize_h(mem, h0, d)
        B = materialize_b(mem, h0, d)
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        bev = np.linalg.eigvalsh(B)
        sign, logdet = np.linalg.slogdet(B)
        eig_lo, eig_hi = min(eig_lo, ev[0]), max(eig_hi, ev[-1])
        gaps = {
            "trace(B) <= C1": _rel_gap(c.C1, float(np.trace(B))),
            "lmax(B) <= C1": _rel_gap(c.C1, float(bev[-1])),
            "logdet(B) >= floor": (logdet - c.log_det_floor) / max(1.0, abs(c.log_det_floor))
            if sign > 0 else -math.inf,
            "lmin(H) >= mu1": (float(ev[0]) - c.mu1) / c.mu1,
            "log lmax(H) <= log mu2": _rel_gap(c.log_mu2, math.log(ev[-1]))
            if ev[-1] > 0 else -math.inf,
        }
        for label, gap in gaps.items():
            worst = min(worst, gap)
            if gap < -slack:
                violations.append({"step": step, "bound": label, "gap": gap})
    details = {"constants": c.as_dict(), "iterates": len(trace.snapshots),
               "H_eig_min": float(eig_lo), "H_eig_max": float(eig_hi)}
    return CheckReport("eigen_bounds", not violations, worst, details, violations)


def check_pair_inequalities(trace, constants=None, cautious=False, slack=DEFAULT_SLACK):
    """Per-pair curvature inequalities for every accepted pair.

    Smoothed pairs (``cautious=False``): lam_hat <= |y|^2/y.s <= Lam_hat and
    y.s/|s|^2 >= lam_hat. Cautious pairs: the same with epsilon in place of
    lam_hat.
    """
    c = constants or constants_from_trace(trace, cautious)
    lo = c.epsilon if cautious else c.lam_hat
    worst = math.inf
    violations = []
    for step, s, y, _, hi_local in trace.pairs:
        ys = float(y @ s)
        ratio_y = float(y @ y) / ys
        ratio_s = ys / float(s @ s)
        gaps = {
            "|y|^2/ys >= low": _rel_gap(lo, ratio_y, upper=False),
            "|y|^2/ys <= Lam_hat": _rel_gap(c.Lam_hat, ratio_y),
            "ys/|s|^2 >= low": _rel_gap(lo, ratio_s, upper=False),
        }
        for label, gap in gaps.items():
            worst = min(worst, gap)
            if gap < -slack:
                violations.append({"step": step, "bound": label, "gap": gap})
    name = "cautious_pair_inequalities" if cautious else "pair_inequalities"
    details = {"pairs": len(trace.pairs), "skipped": trace.skipped, "low": lo,
               "Lam_hat": c.Lam_hat}
    passed = not violations and len(trace.pairs) > 0
    return CheckReport(name, passed, worst, details, violations)


def subset_means(xi, b):
    """Means of ``xi`` rows over every size-b subset, in lexicographic order."""
    xi = np.asarray(xi, dtype=float)
    idx = np.array(list(itertools.combinations(range(len(xi)), b)))
    return xi[idx].mean(axis=1)


def check_variance_bound(xi, b):
    """E|mean_S xi - mean xi|^2 <= (1/(n b)) ((n-b)/(n-1)) sum |xi_i|^2, exhaustively."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    n = len(xi)
    if n > 10:
        raise ValueError(f"exhaustive enumeration limited to n <= 10, got {n}")
    xbar = xi.mean(axis=0)
    dev = subset_means(xi, b) - xbar
    lhs = float(np.mean(np.sum(dev * dev, axis=1)))
    shrink = 0.0 if b == n else (n - b) / (n - 1)
    rhs = shrink * float(np.sum(xi * xi)) / (n * b)
    tol = ROUNDOFF * max(1.0, rhs)
    margin = rhs - lhs
    return CheckReport("variance_bound", margin >= -tol, margin,
                       {"n": n, "b": b, "lhs": lhs, "rhs": rhs})


def component_smoothness(problem):
    """max_i of the smoothness constant of f_i for the linear-predictor problems."""
    A = problem.data.dense_features()
    sq = (A * A).sum(axis=1).max()
    if problem.kind == "least_squares":
        return float(sq) + problem.reg
    if problem.kind == "logistic":
        return 0.25 * float(sq) + problem.reg
    raise ValueError(f"no closed-form component smoothness for {problem.kind}")


def noise_constant(problem, w_star):
    """N = (2/n) sum_i |grad f_i(w*)|^2."""
    G = problem.per_sample_gradients(w_star)
    return 2.0 * float(np.mean(np.sum(G * G, axis=1)))


def check_batch_gradient_bound(problem, w_samples, b, w_star, lam, Lam, f_star=None):
    """Exact E|grad F^S(w)|^2 against both batch-gradient bounds at every sample.

    ``Lam`` must bound the smoothness of each component f_i. Reports the
    tighter (convex components) bound in ``margin``; the strongly convex
    bound with the extra condition number factor is checked as well.
    """
    n = problem.n
    if n > 10:
        raise ValueError(f"exhaustive enumeration limited to n <= 10, got {n}")
    bb = beta(n, b)
    kappa = Lam / lam
    N = noise_constant(problem, w_star)
    if f_star is None:
        f_star = problem.batch_loss(w_star)
    worst = math.inf
    violations = []
    for w in np.atleast_2d(w_samples):
        G = problem.per_sample_gradients(w)
        means = subset_means(G, b)
        lhs = float(np.mean(np.sum(means * means, axis=1)))
        gap_f = max(problem.batch_loss(w) - f_star, 0.0)
        full = float(np.sum(G.mean(axis=0) ** 2))
        rhs_convex = 4 * bb * Lam * gap_f + 2 * full + N
        rhs_strong = 4 * bb * Lam * kappa * gap_f + 2 * full + N
        for label, rhs in (("convex", rhs_convex), ("strongly_convex", rhs_strong)):
            gap = rhs - lhs
            tol = ROUNDOFF * max(1.0, rhs)
            if label == "convex":
                worst = min(worst, gap)
            if gap < -tol:
                violations.append({"w": w.tolist(), "bound": label, "lhs": lhs, "rhs": rhs})
    details = {"n": n, "b": b, "beta": bb, "kappa": kappa, "N": N, "Lam": Lam, "lam": lam}
    return CheckReport("batch_gradient_bound", not violations, worst, details, violations)


def plateau(curve, frac=0.2):
    """Mean of the last ``frac`` share of a sub-optimality curve."""
    curve = np.asarray(curve, dtype=float)
    k = max(1, int(math.ceil(frac * len(curve))))
    return float(np.mean(curve[-k:]))


def check_plateau_monotone(family, min_seeds=20, level=0.05, frac=0.2):
    """Constant-step neighborhood: plateau shrinks with the step size.

    ``family`` maps alpha -> list of per-seed curves, seeds aligned across
    alphas. The seed-averaged plateau must be non-increasing as alpha
    decreases, and for each alpha present together with alpha/4 a one-sided
    paired t-test must reject equal plateaus. Fewer than ``min_seeds`` seeds
    gives an inconclusive report.
    """
    alphas = sorted(family)
    per_seed = {a: np.array([plateau(c, frac) for c in family[a]]) for a in alphas}
    means = {a: float(per_seed[a].mean()) for a in alphas}
    n_seeds = min(len(v) for v in per_seed.values())
    violations = []
    margin = math.inf
    for lo, hi in zip(alphas, alphas[1:]):
        gap = means[hi] - means[lo]
        margin = min(margin, gap / max(abs(means[hi]), 1e-300))
        if gap < 0:
            violations.append({"alpha_lo": lo, "alpha_hi": hi, "plateau_lo": means[lo],
                               "plateau_hi": means[hi]})
    tests = []
    for a in alphas:
        quarter = [q for q in alphas if math.isclose(q, a / 4, rel_tol=1e-9)]
        if not quarter:
            continue
        small, big = per_seed[quarter[0]][:n_seeds], per_seed[a][:n_seeds]
        p = float(stats.ttest_rel(big, small, alternative="greater").pvalue) if n_seeds > 1 else 1.0
        ratio = means[a] / means[quarter[0]] if means[quarter[0]] > 0 else math.inf
        tests.append({"alpha": a, "ratio": ratio, "p_value": p})
        if not (means[quarter[0]] < means[a] and p < level):
            violations.append({"alpha": a, "ratio": ratio, "p_value": p})
    details = {"plateaus": {repr(a): means[a] for a in alphas}, "seeds": n_seeds,
               "quarter_tests": tests}
    inconclusive = n_seeds < min_seeds
    return CheckReport("plateau_monotone", not violations and not inconclusive, margin,
                       details, violations, inconclusive)


def loglog_slope(k, values):
    """Least-squares slope of log(values) against log(k)."""
    k = np.asarray(k, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (k > 0) & (values > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(k[keep]), np.log(values[keep]), 1)[0])


def check_decay_rate(steps, curve, E, lo=-1.3, hi=-0.7, tail=0.5):
    """Decaying step alpha/(k+E): envelope G/(k+E) with a log-log slope near -1.

    The slope is fitted on the last ``tail`` share of the curve against k+E;
    ``G_hat`` is the smallest constant with curve <= G_hat/(k+E) there.
    """
    steps = np.asarray(steps, dtype=float)
    curve = np.asarray(curve, dtype=float)
    start = int(len(curve) * (1 - tail))
    x, y = steps[start:] + E, curve[start:]
    slope = loglog_slope(x, y)
    G_hat = float(np.max(x * y))
    ok = np.isfinite(slope) and lo <= slope <= hi
    margin = min(slope - lo, hi - slope) if np.isfinite(slope) else -math.inf
    return CheckReport("decay_rate", bool(ok), margin, {"slope": slope, "G_hat": G_hat, "E": E})


def running_average(values):
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, len(values) + 1)


def check_nonconvex_plateau(family, min_seeds=20, frac=0.2):
    """Running-average squared gradient norm: its plateau shrinks with alpha.

    ``family`` maps alpha -> list of per-seed gradient-norm curves.
    """
    sq = {a: [running_average(np.asarray(c) ** 2) for c in curves]
          for a, curves in family.items()}
    rep = check_plateau_monotone(sq, min_seeds=min_seeds, frac=frac)
    rep.name = "nonconvex_gradient_plateau"
    return rep


def check_admissible_alpha(alpha, constants, b):
    """Whether the configured step lies inside the theoretical constant-step interval."""
    upper = constants.admissible_step(b)
    return CheckReport("admissible_alpha", alpha < upper, upper - alpha,
                       {"alpha": alpha, "upper": upper, "mu1": constants.mu1,
                        "log_mu2": constants.log_mu2, "empirical": True})


def estimate_constants(problem, w_star, b, m, rng=None, n_batches=20, visited=None,
                       sigma=1.0, Sigma=1.0, epsilon=1e-8):
    """Empirical constants from dense curvature matrices (small d only).

    lam, Lam: extreme eigenvalues of the full Hessian at w*. lam_hat, Lam_hat:
    extremes over ``n_batches`` sampled batch Hessians. gamma, eta are fitted
    on ``visited`` iterates only, so they are empirical, not certified.
    """
    rng = np.random.default_rng(rng)
    ev = np.linalg.eigvalsh(problem.hessian_matrix(w_star))
    lows, highs = [], []
    for _ in range(n_batches):
        S = np.sort(rng.choice(problem.n, size=b, replace=False))
        bev = np.linalg.eigvalsh(problem.hessian_matrix(w_star, S))
        lows.append(bev[0])
        highs.append(bev[-1])
    N = noise_constant(problem, w_star)
    gamma = math.sqrt(N / 2)
    eta = 0.0
    for w in (visited if visited is not None else []):
        G = problem.per_sample_gradients(w)
        second = float(np.mean(np.sum(G * G, axis=1)))
        full = float(np.sum(G.mean(axis=0) ** 2))
        if full > 0:
            eta = max(eta, (second - gamma ** 2) / full)
    return TheoryConstants(d=problem.dim, m=m, lam_hat=float(min(lows)),
                           Lam_hat=float(max(highs)), sigma=sigma, Sigma=Sigma,
                           lam=float(ev[0]), Lam=float(ev[-1]), n=problem.n, N=N,
                           gamma=gamma, eta=eta, epsilon=epsilon)


def plateau_family(problem, base_config, alphas, seeds, epochs, f_star, metric="subopt"):
    """Run one configuration over an alpha grid and seed list.

    Returns alpha -> list of per-seed curves of ``metric``. A diverged run
    contributes an infinite curve so it always ranks worst.
    """
    from .optimizer import DivergedError

    out = {}
    for a in alphas:
        curves = []
        for s in seeds:
            cfg = OptimizerConfig.from_dict({**base_config, "lr": a, "seed": s})
            try:
                rec = run(problem, cfg, epochs, f_star=f_star)
                curves.append(getattr(rec, metric))
            except DivergedError:
                curves.append([math.inf] * (epochs + 1))
        out[a] = curves
    return out
