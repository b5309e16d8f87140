"""L-BFGS search directions: classic two-loop and vector-free recursion.

Both recursions return ``-H g`` where H is the limited-memory inverse
Hessian approximation built from the stored pairs on top of an arbitrary
initial scaling ``h0`` (any callable applying a symmetric positive definite
operator). The vector-free form only needs the small dot-product matrix M,
one application of ``h0`` and m extra inner products, which is what makes it
suitable for a map-reduce setting.
"""

from dataclasses import dataclass

import numpy as np

# coefficient arithmetic runs on (m+1) x m scalars; use the widest float
_COEF = np.longdouble


class CurvatureError(ValueError):
    """A stored pair violates y.s > 0."""


@dataclass
class DirectionResult:
    direction: np.ndarray
    deltas: np.ndarray  # delta_0 .. delta_{2m+1}
    alphas: np.ndarray  # alpha_1 .. alpha_m (oldest pair first)
    M: np.ndarray
    r0: np.ndarray

    @property
    def m(self):
        return len(self.alphas)


def _stack(memory):
    pairs = list(memory)
    if not pairs:
        return None, None
    S = np.array([p.s for p in pairs], dtype=float)
    Y = np.array([p.y for p in pairs], dtype=float)
    return S, Y


def _tally(ops, key, n=1):
    if ops is not None:
        ops[key] = ops.get(key, 0) + n


def classic_two_loop(memory, g, h0):
    """Two-loop recursion; returns ``-H g``."""
    g = np.asarray(g, dtype=float)
    S, Y = _stack(memory)
    q = -g
    if S is None:
        return h0(q)
    m = S.shape[0]
    rho = np.empty(m)
    alpha = np.empty(m)
    for i in range(m):
        ys = float(np.dot(Y[i], S[i]))
        if not ys > 0:
            raise CurvatureError(f"pair {i} has y.s = {ys!r} <= 0")
        rho[i] = 1.0 / ys
    for i in range(m - 1, -1, -1):
        alpha[i] = rho[i] * np.dot(S[i], q)
        q = q - alpha[i] * Y[i]
    r = h0(q)
    for i in range(m):
        beta = rho[i] * np.dot(Y[i], r)
        r = r + S[i] * (alpha[i] - beta)
    return r


def dot_matrix(memory, g, ops=None):
    """(m+1) x m matrix with M[p, q] = y_p.s_q and M[m, q] = g.s_q."""
    g = np.asarray(g, dtype=float)
    S, Y = _stack(memory)
    if S is None:
        raise ValueError("dot_matrix needs at least one stored pair")
    if g.shape != (S.shape[1],):
        raise ValueError(f"g has shape {g.shape}, expected ({S.shape[1]},)")
    m = S.shape[0]
    _tally(ops, "dot", m * (m + 1))
    return np.vstack([Y @ S.T, (S @ g)[None, :]])


def vector_free_coefficients(M, y_dot_r0):
    """Coefficient loops of the vector-free recursion.

    ``M`` is the (m+1) x m dot-product matrix and ``y_dot_r0(q_coeffs)`` is a
    callback that, given the coefficients of q over (y_1..y_m, g), forms
    ``r0 = H0 q`` and returns ``(r0, Y)`` with ``Y[j] = y_j.r0``. Returns
    ``(deltas, alphas, r0)``; indices of ``deltas`` follow the base-vector
    numbering, delta_0 multiplies r0.
    """
    M = np.asarray(M, dtype=float)
    m = M.shape[1]
    Mc = M.astype(_COEF)
    delta = np.zeros(2 * m + 2, dtype=_COEF)
    delta[0] = 1
    delta[2 * m + 1] = -1
    alpha = np.zeros(m, dtype=_COEF)
    for j in range(m, 0, -1):
        # alpha_j = (1/M_jj) sum_{l=1}^{m+1} delta_{l+m} M_{l,j}
        a = np.dot(delta[m + 1:2 * m + 2], Mc[:, j - 1]) / Mc[j - 1, j - 1]
        alpha[j - 1] = a
        delta[m + j] -= a
    r0, Yv = y_dot_r0(delta[m + 1:2 * m + 2].astype(float))
    Yc = np.asarray(Yv, dtype=float).astype(_COEF)
    for j in range(1, m + 1):
        beta = (delta[0] * Yc[j - 1] + np.dot(delta[1:m + 1], Mc[j - 1, :])) / Mc[j - 1, j - 1]
        delta[j] += alpha[j - 1] - beta
    return delta, alpha, r0


def vector_free_two_loop(memory, g, h0, ops=None):
    """Vector-free two-loop recursion for an arbitrary initial scaling ``h0``.

    ``ops``, if given, is a dict that receives counts of the length-d work:
    ``dot`` (inner products), ``h0`` (operator applications) and ``combine``
    (linear combinations of base vectors).
    """
    g = np.asarray(g, dtype=float)
    S, Y = _stack(memory)
    if S is None:
        _tally(ops, "combine")
        r0 = h0(-g)
        _tally(ops, "h0")
        delta = np.array([1.0, -1.0])
        return DirectionResult(r0, delta, np.zeros(0), np.zeros((1, 0)), r0)

    for i in range(S.shape[0]):
        if not np.dot(Y[i], S[i]) > 0:
            raise CurvatureError(f"pair {i} has y.s <= 0")
    M = dot_matrix(memory, g, ops)

    def scale_and_project(q_coef):
        q = Y.T @ q_coef[:-1] + q_coef[-1] * g
        _tally(ops, "combine")
        r0 = h0(q)
        _tally(ops, "h0")
        _tally(ops, "dot", Y.shape[0])
        return r0, Y @ r0

    delta, alpha, r0 = vector_free_coefficients(M, scale_and_project)
    m = S.shape[0]
    d64 = delta.astype(float)
    direction = d64[0] * r0 + S.T @ d64[1:m + 1]
    _tally(ops, "combine")
    return DirectionResult(direction, d64, alpha.astype(float), M, r0)
