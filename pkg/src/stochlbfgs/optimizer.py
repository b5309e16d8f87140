"""Stochastic L-BFGS outer loop, baseline optimizers and the epoch runner.

Variants
--------
``lbfgs-h``   y_k = B^{S_k}(w_k) s_k with B the batch Hessian
``lbfgs-f``   y_k = batch Gauss-Newton / Fisher product with s_k
``lbfgs-s``   y from gradients of consecutive, different batches (unstable baseline)
``lbfgs``     classical full-batch L-BFGS, gamma*I scaling and Armijo backtracking
``sgd``       heavy-ball momentum SGD
``adam``, ``adagrad``

The stochastic L-BFGS variants share one step: sample S_k, take the batch
gradient, update the ADAM moments, compute p_k = -H_k m_hat with the
vector-free recursion on top of H0 = diag(1/(sqrt(v_hat)+1e-8)), move with
step alpha_k, then offer the new pair to the cautious memory.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .distributed import (
    CommLedger,
    distributed_recursion_round,
    shard_batch,
    sharded_ggn_vec,
    sharded_gradient,
    sharded_hessian_vec,
)
from .memory import DEFAULT_EPSILON, LbfgsMemory
from .preconditioner import ADAM_EPS, AdamState, DiagonalH0, ScalarH0
from .problems import sample_batch
from .two_loop import vector_free_two_loop

QN_VARIANTS = ("lbfgs-h", "lbfgs-f", "lbfgs-s")
VARIANTS = QN_VARIANTS + ("lbfgs", "sgd", "adam", "adagrad")
CSV_COLUMNS = ("epoch", "train_loss", "subopt", "test_error", "grad_norm", "skips", "comm_scalars")


class DivergedError(RuntimeError):
    def __init__(self, step, message, record=None):
        super().__init__(f"diverged at step {step}: {message}")
        self.step = step
        self.record = record


def lr_schedule(kind, k, alpha, offset=1.0):
    """Step size at iteration k: ``alpha`` or ``alpha / (k + offset)``."""
    if kind == "constant":
        return alpha
    if kind == "decaying":
        return alpha / (k + offset)
    raise ValueError(f"unknown schedule {kind!r}")


@dataclass
class OptimizerConfig:
    variant: str = "lbfgs-h"
    memory: int = 10
    batch_size: int = 64
    lr: float = 0.1
    schedule: str = "constant"
    decay_offset: float = 1.0
    epsilon: float = DEFAULT_EPSILON
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = ADAM_EPS
    momentum: float = 0.9
    # H0 for the stochastic L-BFGS variants: adam | identity | scalar
    preconditioner: str = "adam"
    # where the batch curvature is evaluated: "current" (w_k) or "next" (w_k+1)
    curvature_point: str = "current"
    # lbfgs-s pairing with y = g_k - g_{k-1}: "lagged" uses s = w_{k+1} - w_k,
    # "aligned" uses s = w_k - w_{k-1} so both differences span the same points
    s_pairing: str = "lagged"
    seed: int = 0
    workers: int = 0
    placement: str = "round-robin"
    divergence_factor: float = 1e3
    armijo: float = 1e-4
    max_backtracks: int = 40

    def validate(self, n=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if self.batch_size < 1 or (n is not None and self.batch_size > n):
            raise ValueError(f"batch size must satisfy 1 <= b <= n, got {self.batch_size}")
        if self.schedule == "decaying" and not self.decay_offset > 0:
            raise ValueError("decaying schedule needs decay_offset > 0")
        if self.schedule not in ("constant", "decaying"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.preconditioner not in ("adam", "identity", "scalar"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.curvature_point not in ("current", "next"):
            raise ValueError(f"unknown curvature_point {self.curvature_point!r}")
        if self.s_pairing not in ("aligned", "lagged"):
            raise ValueError(f"unknown s_pairing {self.s_pairing!r}")
        if self.workers < 0 or (n is not None and self.workers > min(n, self.batch_size)):
            raise ValueError("workers must not exceed the batch size")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown optimizer option(s): {sorted(unknown)}")
        return cls(**d)


class _Optimizer:
    def __init__(self, problem, config, w0=None):
        self.problem = problem
        self.config = config.validate(problem.n)
        self.rng = np.random.default_rng(config.seed)
        if w0 is None:
            # separate stream so the batch sequence does not depend on the init
            w0 = problem.initial_point(np.random.default_rng([config.seed, 1]))
        self.w = np.array(w0, dtype=float)
        self.k = 0
        self.skips = 0
        self.oracle_calls = 0
        self.ledger = CommLedger() if config.workers else None

    @property
    def steps_per_epoch(self):
        return math.ceil(self.problem.n / self.config.batch_size)

    def lr(self):
        c = self.config
        return lr_schedule(c.schedule, self.k, c.lr, c.decay_offset)

    def next_batch(self):
        return sample_batch(self.problem.n, self.config.batch_size, self.rng)

    def _shards(self, S):
        return shard_batch(S, self.config.workers)

    def gradient(self, w, S):
        self.oracle_calls += len(S)
        if self.ledger is not None:
            g = sharded_gradient(self._shards(S), self.problem, w, self.ledger)
        else:
            g = self.problem.batch_gradient(w, S)
        if not np.all(np.isfinite(g)):
            raise DivergedError(self.k, "non-finite gradient")
        return g

    def _move(self, p, alpha):
        w_new = self.w + alpha * p
        if not np.all(np.isfinite(w_new)):
            raise DivergedError(self.k, "non-finite iterate")
        return w_new


class StochasticLBFGS(_Optimizer):
    """LBFGS-H / LBFGS-F / LBFGS-S with ADAM (or fixed) initial scaling."""

    def __init__(self, problem, config, w0=None):
        super().__init__(problem, config, w0)
        self.memory = LbfgsMemory(config.memory, config.epsilon)
        self.adam = AdamState(problem.dim, config.beta1, config.beta2, config.adam_eps)
        self._prev = None  # (w, raw gradient) of the previous step, for lbfgs-s

    def _h0(self, g_raw):
        c = self.config
        if c.preconditioner == "adam":
            m_hat, v_hat = self.adam.update(g_raw)
            return m_hat, DiagonalH0(v_hat, c.adam_eps)
        if c.preconditioner == "scalar" and len(self.memory):
            newest = self.memory[-1]
            return g_raw, ScalarH0(float(newest.y @ newest.s) / float(newest.y @ newest.y))
        return g_raw, ScalarH0(1.0)

    def _curvature(self, w_at, S, s):
        c = self.config
        self.oracle_calls += len(S)
        if c.variant == "lbfgs-h":
            if self.ledger is not None:
                return sharded_hessian_vec(self._shards(S), self.problem, w_at, s, self.ledger)
            return self.problem.hessian_vec(w_at, S, s)
        if self.ledger is not None:
            return sharded_ggn_vec(self._shards(S), self.problem, w_at, s, self.ledger)
        return self.problem.ggn_vec(w_at, S, s)

    def _offer(self, s, y):
        if self.ledger is not None:
            self.ledger.record_broadcast("curvature", len(y))
        accepted = self.memory.push(s, y)
        if not accepted:
            self.skips += 1
        return accepted

    def step(self, callback=None):
        c = self.config
        S = self.next_batch()
        g_raw = self.gradient(self.w, S)
        use_pairs = c.memory > 0
        accepted = None
        s = y = None

        if use_pairs and c.variant == "lbfgs-s" and c.s_pairing == "aligned" and self._prev:
            w_prev, g_prev = self._prev
            s, y = self.w - w_prev, g_raw - g_prev
            accepted = self._offer(s, y)

        g, h0 = self._h0(g_raw)
        if self.ledger is not None:
            res = distributed_recursion_round(self.memory, g, h0, c.workers, self.ledger,
                                              c.placement)
        else:
            res = vector_free_two_loop(self.memory, g, h0)
        p = res.direction
        w_new = self._move(p, self.lr())

        if use_pairs and c.variant in ("lbfgs-h", "lbfgs-f"):
            s = w_new - self.w
            y = self._curvature(self.w if c.curvature_point == "current" else w_new, S, s)
            accepted = self._offer(s, y)
        elif use_pairs and c.variant == "lbfgs-s" and c.s_pairing == "lagged" and self._prev:
            s = w_new - self.w
            y = g_raw - self._prev[1]
            accepted = self._offer(s, y)

        if callback is not None:
            callback(self, {"step": self.k, "batch": S, "w": self.w, "g_raw": g_raw, "g": g,
                            "h0": h0, "direction": p, "s": s, "y": y, "accepted": accepted})
        self._prev = (self.w, g_raw)
        self.w = w_new
        self.k += 1


class AdamOptimizer(_Optimizer):
    def __init__(self, problem, config, w0=None):
        super().__init__(problem, config, w0)
        self.adam = AdamState(problem.dim, config.beta1, config.beta2, config.adam_eps)

    def step(self, callback=None):
        S = self.next_batch()
        g = self.gradient(self.w, S)
        m_hat, v_hat = self.adam.update(g)
        p = self.adam.direction(m_hat, v_hat)
        if callback is not None:
            callback(self, {"step": self.k, "batch": S, "w": self.w, "g": m_hat, "direction": p})
        self.w = self._move(p, self.lr())
        self.k += 1


class MomentumSGD(_Optimizer):
    """Heavy ball: v <- mu v + g, w <- w - alpha v."""

    def __init__(self, problem, config, w0=None):
        super().__init__(problem, config, w0)
        self.velocity = np.zeros(problem.dim)

    def step(self, callback=None):
        S = self.next_batch()
        g = self.gradient(self.w, S)
        self.velocity = self.config.momentum * self.velocity + g
        p = -self.velocity
        if callback is not None:
            callback(self, {"step": self.k, "batch": S, "w": self.w, "g": g, "direction": p})
        self.w = self._move(p, self.lr())
        self.k += 1


class Adagrad(_Optimizer):
    def __init__(self, problem, config, w0=None):
        super().__init__(problem, config, w0)
        self.accum = np.zeros(problem.dim)

    def step(self, callback=None):
        S = self.next_batch()
        g = self.gradient(self.w, S)
        self.accum = self.accum + g * g
        p = -g / (np.sqrt(self.accum) + self.config.adam_eps)
        if callback is not None:
            callback(self, {"step": self.k, "batch": S, "w": self.w, "g": g, "direction": p})
        self.w = self._move(p, self.lr())
        self.k += 1


def _armijo_search(problem, w, f0, g, p, t0, c1, max_backtracks):
    """Backtracking on F along p; returns (t, w_new, f_new) or None."""
    slope = float(g @ p)
    t = t0
    for _ in range(max_backtracks):
        w_new = w + t * p
        f_new = problem.batch_loss(w_new)
        if f_new <= f0 + c1 * t * slope:
            return t, w_new, f_new
        # roundoff floor: F cannot resolve the decrease any more
        if abs(f_new - f0) <= 8 * np.finfo(float).eps * max(abs(f0), 1.0) and t == t0:
            return t, w_new, f_new
        t *= 0.5
    return None


class ClassicLBFGS(_Optimizer):
    """Deterministic full-batch L-BFGS; one step is one pass over the data."""

    def __init__(self, problem, config, w0=None):
        super().__init__(problem, config, w0)
        self.memory = LbfgsMemory(config.memory, config.epsilon)
        self.f = problem.batch_loss(self.w)
        self.g = problem.batch_gradient(self.w)
        self.oracle_calls += problem.n

    @property
    def steps_per_epoch(self):
        return 1

    def step(self, callback=None):
        c = self.config
        if len(self.memory):
            newest = self.memory[-1]
            h0 = ScalarH0(float(newest.y @ newest.s) / float(newest.y @ newest.y))
        else:
            h0 = ScalarH0(1.0 / max(1.0, float(np.linalg.norm(self.g))))
        p = vector_free_two_loop(self.memory, self.g, h0).direction
        if not float(self.g @ p) < 0:
            self.memory.clear()
            p = -self.g
        found = _armijo_search(self.problem, self.w, self.f, self.g, p, c.lr, c.armijo,
                               c.max_backtracks)
        if found is None:
            raise DivergedError(self.k, "line search failed")
        _, w_new, f_new = found
        g_new = self.problem.batch_gradient(w_new)
        self.oracle_calls += self.problem.n
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            raise DivergedError(self.k, "non-finite loss or gradient")
        s, y = w_new - self.w, g_new - self.g
        if not self.memory.push(s, y):
            self.skips += 1
        if callback is not None:
            callback(self, {"step": self.k, "w": self.w, "g": self.g, "direction": p,
                            "s": s, "y": y})
        self.w, self.f, self.g = w_new, f_new, g_new
        self.k += 1


_CLASSES = {
    "lbfgs-h": StochasticLBFGS,
    "lbfgs-f": StochasticLBFGS,
    "lbfgs-s": StochasticLBFGS,
    "lbfgs": ClassicLBFGS,
    "sgd": MomentumSGD,
    "adam": AdamOptimizer,
    "adagrad": Adagrad,
}


def make_optimizer(problem, config, w0=None):
    return _CLASSES[config.variant](problem, config, w0)


def solve_full_batch(problem, w0=None, memory=10, tol=1e-10, max_iter=2000):
    """Classical L-BFGS to high accuracy; returns ``(w, f, grad_norm, converged)``."""
    cfg = OptimizerConfig(variant="lbfgs", memory=memory, lr=1.0, batch_size=problem.n,
                          epsilon=1e-12, max_backtracks=60)
    opt = ClassicLBFGS(problem, cfg, w0)
    for _ in range(max_iter):
        if np.linalg.norm(opt.g) <= tol:
            break
        try:
            opt.step()
        except DivergedError:
            break
    gn = float(np.linalg.norm(opt.g))
    return opt.w, opt.f, gn, gn <= tol


@dataclass
class RunRecord:
    variant: str
    config: dict
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    subopt: list = field(default_factory=list)
    test_error: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    skips: list = field(default_factory=list)
    comm_scalars: list = field(default_factory=list)
    oracle_calls: list = field(default_factory=list)
    ledger: dict = None
    diverged_at: int = None
    w: np.ndarray = None

    def rows(self):
        return list(zip(*(getattr(self, c) for c in CSV_COLUMNS)))

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows():
            writer.writerow([_fmt(x) for x in row])

    def to_csv(self):
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def as_dict(self):
        out = {c: list(getattr(self, c)) for c in CSV_COLUMNS + ("oracle_calls",)}
        out.update(variant=self.variant, config=self.config, ledger=self.ledger,
                   diverged_at=self.diverged_at)
        return out


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def run(problem, config, epochs, f_star=None, test_data=None, callback=None, w0=None):
    """Run ``epochs`` passes and record metrics at the start and after each epoch.

    ``subopt`` is F(w) - f_star, or the training loss itself when no
    reference value is supplied. Raises :class:`DivergedError` carrying the
    partial record.
    """
    opt = make_optimizer(problem, config, w0)
    record = RunRecord(config.variant, asdict(config))

    def log(ep):
        f = problem.batch_loss(opt.w)
        g = problem.batch_gradient(opt.w)
        record.epoch.append(ep)
        record.train_loss.append(f)
        record.subopt.append(f - f_star if f_star is not None else f)
        record.test_error.append(problem.test_error(opt.w, test_data) if test_data is not None
                                 else float("nan"))
        record.grad_norm.append(float(np.linalg.norm(g)))
        record.skips.append(opt.skips)
        record.comm_scalars.append(opt.ledger.total if opt.ledger is not None else 0)
        record.oracle_calls.append(opt.oracle_calls)
        return f

    f0 = log(0)
    limit = config.divergence_factor * max(abs(f0), np.finfo(float).tiny)
    try:
        for ep in range(1, epochs + 1):
            for _ in range(opt.steps_per_epoch):
                opt.step(callback)
            f = log(ep)
            if not np.isfinite(f) or f > limit:
                raise DivergedError(opt.k, f"loss {f!r} exceeds {config.divergence_factor}x initial")
    except DivergedError as err:
        record.diverged_at = err.step
        record.w = opt.w
        record.ledger = opt.ledger.as_dict() if opt.ledger is not None else None
        err.record = record
        raise
    record.w = opt.w
    record.ledger = opt.ledger.as_dict() if opt.ledger is not None else None
    return record
