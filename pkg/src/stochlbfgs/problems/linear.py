"""Linear-predictor problems h_i(w) = a_i.w: least squares and logistic loss."""

import numpy as np
from scipy.special import expit

from .base import FiniteSumProblem
from .data import to_binary_labels


class _LinearModel(FiniteSumProblem):
    def __init__(self, data, reg=0.0):
        super().__init__(data, reg)
        self.A = data.features
        self.b = np.asarray(data.labels, dtype=float)

    @property
    def dim(self):
        return self.data.d

    def _rows(self, idx):
        if len(idx) == self.n and np.array_equal(idx, np.arange(self.n)):
            return self.A, self.b
        return self.A[idx], self.b[idx]

    def _jtu(self, A, u):
        return np.asarray(A.T @ u).ravel()


class LeastSquares(_LinearModel):
    """f_i(w) = 0.5 (a_i.w - b_i)^2 + 0.5 reg ||w||^2."""

    kind = "least_squares"

    def _loss(self, w, idx):
        A, b = self._rows(idx)
        r = A @ w - b
        return 0.5 * float(r @ r) / len(idx)

    def _grad(self, w, idx):
        A, b = self._rows(idx)
        return self._jtu(A, A @ w - b) / len(idx)

    def _hvp(self, w, idx, v):
        A, _ = self._rows(idx)
        return self._jtu(A, A @ v) / len(idx)

    def _ggn(self, w, idx, v):
        # L_hh = I / |S|, so J^T L_hh J coincides with the Hessian term
        A, _ = self._rows(idx)
        return self._jtu(A, A @ v) / len(idx)

    def smoothness(self):
        """Largest per-sample smoothness constant max_i ||a_i||^2 + reg."""
        A = self.A
        sq = np.asarray(A.multiply(A).sum(axis=1)).ravel() if hasattr(A, "multiply") else (A * A).sum(1)
        return float(sq.max()) + self.reg

    def solve(self):
        """Closed-form minimiser of (A^T A + reg n I) w = A^T b."""
        A = self.data.dense_features()
        K = A.T @ A + self.reg * self.n * np.eye(self.dim)
        return np.linalg.solve(K, A.T @ self.b)

    def test_error(self, w, data):
        r = data.features @ w - data.labels
        return float(np.mean(r * r))


class LogisticRegression(_LinearModel):
    """f_i(w) = log(1 + exp(-b_i a_i.w)) + 0.5 reg ||w||^2, b_i in {-1, +1}.

    ``reg`` defaults to 1/n so the strong-convexity constant is known.
    """

    kind = "logistic"

    def __init__(self, data, reg=None):
        if reg is None:
            reg = 1.0 / data.n
        super().__init__(data, reg)
        self.b = to_binary_labels(data.labels)

    def _loss(self, w, idx):
        A, b = self._rows(idx)
        return float(np.mean(np.logaddexp(0.0, -b * (A @ w))))

    def _grad(self, w, idx):
        A, b = self._rows(idx)
        return self._jtu(A, -b * expit(-b * (A @ w))) / len(idx)

    def _hvp(self, w, idx, v):
        # d/dt of the gradient expression along v
        A, b = self._rows(idx)
        t = -b * (A @ w)
        curv = b * b * expit(t) * expit(-t)
        return self._jtu(A, curv * (A @ v)) / len(idx)

    def _ggn(self, w, idx, v):
        # output h = a.w, L_hh = sigma(h)(1 - sigma(h)) / |S|
        A, _ = self._rows(idx)
        h = A @ w
        lhh = expit(h) * expit(-h) / len(idx)
        return self._jtu(A, lhh * (A @ v))

    def test_error(self, w, data):
        pred = np.where(np.asarray(data.features @ w).ravel() >= 0, 1.0, -1.0)
        return float(np.mean(pred != to_binary_labels(data.labels)))
