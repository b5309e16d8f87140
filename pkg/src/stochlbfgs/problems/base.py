import numpy as np


class UnsupportedLossError(NotImplementedError):
    """The loss has no (diagonal) Gauss-Newton curvature available."""


class FiniteSumProblem:
    """F(w) = (1/n) sum_i f_i(w) with batch first/second-order oracles.

    Subclasses implement the ``_loss``, ``_grad``, ``_hvp`` and ``_ggn``
    hooks on an already-validated index array. Every public oracle takes a
    batch ``S`` (array of row indices, or ``None`` for the full data set)
    and averages over it.
    """

    kind = "abstract"
    convex = True
    # Hessian of the loss w.r.t. the model output is diagonal over samples
    lhh_diagonal = True

    def __init__(self, data, reg=0.0):
        self.data = data
        self.reg = float(reg)

    @property
    def n(self):
        return self.data.n

    @property
    def dim(self):
        raise NotImplementedError

    def _indices(self, S):
        if S is None:
            return np.arange(self.n)
        idx = np.asarray(S)
        if idx.ndim != 1:
            raise ValueError("batch must be a 1-d index array")
        if idx.size == 0:
            raise ValueError("empty batch")
        return idx

    def _check_w(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"w has shape {w.shape}, expected ({self.dim},)")
        return w

    def batch_loss(self, w, S=None):
        w = self._check_w(w)
        return float(self._loss(w, self._indices(S))) + 0.5 * self.reg * float(w @ w)

    def batch_gradient(self, w, S=None):
        w = self._check_w(w)
        return self._grad(w, self._indices(S)) + self.reg * w

    def hessian_vec(self, w, S, v):
        w = self._check_w(w)
        v = np.asarray(v, dtype=float)
        return self._hvp(w, self._indices(S), v) + self.reg * v

    def ggn_vec(self, w, S, v):
        """J^T L_hh J v for the batch, plus the regulariser curvature."""
        w = self._check_w(w)
        v = np.asarray(v, dtype=float)
        return self._ggn(w, self._indices(S), v) + self.reg * v

    def _ggn(self, w, idx, v):
        raise UnsupportedLossError(f"{self.kind} has no Gauss-Newton product")

    def loss_and_grad(self, w, S=None):
        return self.batch_loss(w, S), self.batch_gradient(w, S)

    def per_sample_gradients(self, w, S=None):
        return np.array([self.batch_gradient(w, [i]) for i in self._indices(S)])

    def hessian_matrix(self, w, S=None, curvature="hessian"):
        """Dense batch Hessian (or GGN) assembled column by column."""
        op = self.hessian_vec if curvature == "hessian" else self.ggn_vec
        eye = np.eye(self.dim)
        H = np.column_stack([op(w, S, eye[:, j]) for j in range(self.dim)])
        return 0.5 * (H + H.T)

    def initial_point(self, rng=None):
        return np.zeros(self.dim)

    def test_error(self, w, data):
        raise NotImplementedError
