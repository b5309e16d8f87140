"""Logical server/worker simulation of the map-reduce L-BFGS round.

Nothing here touches a network. Workers are deterministic sequential tasks;
what the simulator adds over the in-process code is (a) the data layout
(sharded batches, placement of dot products) and (b) a ledger of how many
scalars each message pattern would move. Aggregation always uses a fixed
binary tree so results do not depend on completion order.

Scalar accounting per optimizer round, with L = ceil(log2 tau):

    gradient   : d (broadcast w) + d*L (tree-reduce local gradients)
    curvature  : d (broadcast s) + d*L (tree-reduce B s) + d (broadcast y)
    recursion  : m(m+1) (dot products up) + d (broadcast r0) + m (Y up)

The recursion line is for the ``per-dot-product`` and ``round-robin``
placements. ``coordinate`` placement tree-reduces partial dot products
instead: (m(m+1) + m) * L + d.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .two_loop import DirectionResult, vector_free_coefficients

PHASES = ("gradient", "curvature", "recursion")
PLACEMENTS = ("per-dot-product", "round-robin", "coordinate")
BOUND_CONSTANT = 8


class PlacementError(ValueError):
    pass


def tree_depth(tau):
    return math.ceil(math.log2(tau)) if tau > 1 else 0


@dataclass
class CommLedger:
    broadcast: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    reduced: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    rounds: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))

    def record_broadcast(self, phase, scalars):
        self.broadcast[phase] += int(scalars)
        self.rounds[phase] += 1

    def record_reduce(self, phase, scalars_per_round, n_rounds):
        self.reduced[phase] += int(scalars_per_round) * int(n_rounds)
        self.rounds[phase] += int(n_rounds)

    def record_gather(self, phase, scalars):
        self.reduced[phase] += int(scalars)
        self.rounds[phase] += 1

    def phase_total(self, phase):
        return self.broadcast[phase] + self.reduced[phase]

    @property
    def total(self):
        return sum(self.phase_total(p) for p in PHASES)

    def as_dict(self):
        out = {}
        for p in PHASES:
            out[f"{p}_broadcast"] = self.broadcast[p]
            out[f"{p}_reduced"] = self.reduced[p]
            out[f"{p}_rounds"] = self.rounds[p]
        out["total"] = self.total
        return out


def shard_batch(S, tau):
    """Split batch indices into ``tau`` contiguous near-equal shards.

    Larger shards come first: 7 indices over 3 workers gives sizes 3, 2, 2.
    """
    S = np.asarray(S)
    if tau < 1:
        raise ValueError(f"need at least one worker, got tau={tau}")
    if tau > len(S):
        raise ValueError(f"tau={tau} exceeds batch size {len(S)}")
    return [np.asarray(part) for part in np.array_split(S, tau)]


def tree_reduce(parts):
    """Sum ``parts`` pairwise level by level; returns ``(total, rounds)``."""
    level = list(parts)
    if not level:
        raise ValueError("nothing to reduce")
    rounds = 0
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
        rounds += 1
    return level[0], rounds


def _sharded_sum(shards, fn, d, ledger, phase):
    total = sum(len(s) for s in shards)
    # workers send |S_i| times their shard average; integer weights sum to |S|
    # exactly, and the server divides once
    parts = [len(s) * fn(s) for s in shards]
    out, rounds = tree_reduce(parts)
    out = out / total
    if ledger is not None:
        ledger.record_broadcast(phase, d)
        if rounds:
            ledger.record_reduce(phase, d, rounds)
    return out


def sharded_gradient(shards, problem, w, ledger=None):
    w = problem._check_w(w)
    data = _sharded_sum(shards, lambda s: problem._grad(w, problem._indices(s)),
                        problem.dim, ledger, "gradient")
    return data + problem.reg * w


def sharded_ggn_vec(shards, problem, w, v, ledger=None):
    """Batch Gauss-Newton product assembled from per-shard products.

    Requires a loss whose Hessian w.r.t. the model outputs is diagonal.
    """
    if not problem.lhh_diagonal:
        from .problems import UnsupportedLossError
        raise UnsupportedLossError(
            f"{problem.kind} ({getattr(problem, 'ggn_mode', '')}) loss Hessian is not diagonal")
    w = problem._check_w(w)
    v = np.asarray(v, dtype=float)
    data = _sharded_sum(shards, lambda s: problem._ggn(w, problem._indices(s), v),
                        problem.dim, ledger, "curvature")
    return data + problem.reg * v


def sharded_hessian_vec(shards, problem, w, v, ledger=None):
    w = problem._check_w(w)
    v = np.asarray(v, dtype=float)
    data = _sharded_sum(shards, lambda s: problem._hvp(w, problem._indices(s), v),
                        problem.dim, ledger, "curvature")
    return data + problem.reg * v


def place_dot_products(m, tau, mode="round-robin"):
    """Worker id for each of the (m+1)*m entries of M (row-major)."""
    n_entries = (m + 1) * m
    if mode == "per-dot-product":
        if tau < n_entries:
            raise PlacementError(
                f"per-dot-product placement needs tau >= m(m+1) = {n_entries}, got {tau}")
        return np.arange(n_entries)
    if mode == "round-robin":
        return np.arange(n_entries) % tau
    raise PlacementError(f"unknown placement {mode!r}")


def distributed_recursion_round(memory, g, h0, tau, ledger=None, placement="round-robin"):
    """Vector-free recursion executed as server/worker messages.

    Returns the same :class:`DirectionResult` as the in-process
    ``vector_free_two_loop``.
    """
    if placement not in PLACEMENTS:
        raise PlacementError(f"unknown placement {placement!r}")
    g = np.asarray(g, dtype=float)
    pairs = list(memory)
    m = len(pairs)
    d = g.shape[0]
    if m == 0:
        r0 = h0(-g)
        if ledger is not None:
            ledger.record_broadcast("recursion", d)
        return DirectionResult(r0, np.array([1.0, -1.0]), np.zeros(0), np.zeros((1, 0)), r0)

    S = np.array([p.s for p in pairs])
    Y = np.array([p.y for p in pairs])
    rows = list(Y) + [g]  # row p of M pairs rows[p] with S[q]
    M = np.empty((m + 1, m))

    if placement == "coordinate":
        blocks = np.array_split(np.arange(d), min(tau, d))
        partial = [np.array([[np.dot(rows[p][b], S[q][b]) for q in range(m)]
                             for p in range(m + 1)]) for b in blocks]
        M[:], rounds = tree_reduce(partial)
        if ledger is not None and rounds:
            ledger.record_reduce("recursion", m * (m + 1), rounds)
    else:
        owner = place_dot_products(m, tau, placement)
        for worker in np.unique(owner):
            # each worker sends one scalar per dot product it owns
            for e in np.flatnonzero(owner == worker):
                p, q = divmod(int(e), m)
                M[p, q] = np.dot(rows[p], S[q])
        if ledger is not None:
            ledger.record_gather("recursion", m * (m + 1))

    def broadcast_r0(q_coef):
        q = Y.T @ q_coef[:-1] + q_coef[-1] * g
        r0 = h0(q)
        if ledger is not None:
            ledger.record_broadcast("recursion", d)
        if placement == "coordinate":
            blocks = np.array_split(np.arange(d), min(tau, d))
            Yv, rounds = tree_reduce([Y[:, b] @ r0[b] for b in blocks])
            if ledger is not None and rounds:
                ledger.record_reduce("recursion", m, rounds)
        else:
            Yv = np.array([np.dot(Y[j], r0) for j in range(m)])
            if ledger is not None:
                ledger.record_gather("recursion", m)
        return r0, Yv

    delta, alpha, r0 = vector_free_coefficients(M, broadcast_r0)
    d64 = delta.astype(float)
    direction = d64[0] * r0 + S.T @ d64[1:m + 1]
    return DirectionResult(direction, d64, alpha.astype(float), M, r0)


def expected_phase_counts(d, tau, m, placement="round-robin", phases=PHASES):
    """Closed-form scalar counts per phase for one optimizer round."""
    L = tree_depth(tau)
    out = {}
    if "gradient" in phases:
        out["gradient"] = d + d * L
    if "curvature" in phases:
        out["curvature"] = 2 * d + d * L
    if "recursion" in phases:
        if m == 0:
            out["recursion"] = d
        elif placement == "coordinate":
            out["recursion"] = (m * (m + 1) + m) * tree_depth(min(tau, d)) + d
        else:
            out["recursion"] = m * (m + 1) + d + m
    return out


@dataclass
class LedgerSummary:
    per_phase: dict
    total: int
    bound: float
    within_bound: bool
    bound_applicable: bool


def ledger_total(ledger, d, tau, m):
    """Per-phase totals of one round and the check total <= 8 (d L + m^2).

    The bound has a log factor that vanishes at tau = 1 while the broadcasts
    still cost O(d); the check is therefore only applicable for tau >= 2.
    """
    per_phase = {p: ledger.phase_total(p) for p in PHASES}
    total = ledger.total
    bound = BOUND_CONSTANT * (d * tree_depth(tau) + m * m)
    applicable = tau >= 2
    return LedgerSummary(per_phase, total, bound, (total <= bound) if applicable else True,
                         applicable)
