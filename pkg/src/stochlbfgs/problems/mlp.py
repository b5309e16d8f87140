"""One-hidden-layer tanh network with softmax cross-entropy.

With ``hidden=0`` the model reduces to linear multinomial (softmax)
regression, for which the Gauss-Newton product equals the Hessian product.

Hessian-vector products use the R-operator (forward-mode derivative of the
backward pass), so no Hessian is ever materialised.
"""

import numpy as np
from scipy.special import logsumexp, softmax

from .base import FiniteSumProblem


class MLPClassifier(FiniteSumProblem):
    """Cross-entropy classifier ``x -> softmax(W2 tanh(W1 x + b1) + b2)``.

    ``ggn_mode`` selects the output parameterisation of the Gauss-Newton
    product:

    * ``"logits"`` (default): h = pre-softmax logits, L_hh = (diag(p) - p p^T)/|S|.
      Positive semi-definite, but not diagonal across classes.
    * ``"probabilities"``: h = softmax output, L_hh = diag(b / h^2)/|S| with
      b the one-hot label. Diagonal, hence usable by the sharded executor.
    """

    kind = "mlp"
    convex = False

    def __init__(self, data, hidden=32, n_classes=None, reg=0.0, ggn_mode="logits"):
        super().__init__(data, reg)
        if ggn_mode not in ("logits", "probabilities"):
            raise ValueError(f"unknown ggn_mode {ggn_mode!r}")
        self.ggn_mode = ggn_mode
        self.lhh_diagonal = ggn_mode == "probabilities"
        self.X = data.dense_features()
        self.y = np.asarray(data.labels).astype(int)
        if n_classes is None:
            n_classes = int(data.meta.get("n_classes", self.y.max() + 1))
        if self.y.min() < 0 or self.y.max() >= n_classes:
            raise ValueError("class labels must lie in [0, n_classes)")
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        if self.hidden == 0:
            self.kind = "softmax"
            self.convex = True
        self.n_features = self.X.shape[1]

    @property
    def dim(self):
        d, h, c = self.n_features, self.hidden, self.n_classes
        if h == 0:
            return c * d + c
        return h * d + h + c * h + c

    def _unpack(self, w):
        d, h, c = self.n_features, self.hidden, self.n_classes
        if h == 0:
            return None, None, w[:c * d].reshape(c, d), w[c * d:]
        o = h * d
        W1 = w[:o].reshape(h, d)
        b1 = w[o:o + h]
        o += h
        W2 = w[o:o + c * h].reshape(c, h)
        return W1, b1, W2, w[o + c * h:]

    def initial_point(self, rng=None):
        rng = np.random.default_rng(rng)
        d, h, c = self.n_features, self.hidden, self.n_classes
        if h == 0:
            return np.zeros(self.dim)
        W1 = rng.standard_normal((h, d)) / np.sqrt(d)
        W2 = rng.standard_normal((c, h)) / np.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(c)])

    def _forward(self, w, idx):
        W1, b1, W2, b2 = self._unpack(w)
        X = self.X[idx]
        a = X if W1 is None else np.tanh(X @ W1.T + b1)
        z = a @ W2.T + b2
        return X, a, z

    def _backward(self, w, X, a, dz):
        """Transposed Jacobian applied to output cotangent ``dz`` (logits)."""
        W1, _, W2, _ = self._unpack(w)
        gW2 = dz.T @ a
        gb2 = dz.sum(0)
        if W1 is None:
            return np.concatenate([gW2.ravel(), gb2])
        dz1 = (dz @ W2) * (1.0 - a * a)
        return np.concatenate([(dz1.T @ X).ravel(), dz1.sum(0), gW2.ravel(), gb2])

    def _onehot(self, idx):
        Y = np.zeros((len(idx), self.n_classes))
        Y[np.arange(len(idx)), self.y[idx]] = 1.0
        return Y

    def _loss(self, w, idx):
        _, _, z = self._forward(w, idx)
        picked = z[np.arange(len(idx)), self.y[idx]]
        return float(np.mean(logsumexp(z, axis=1) - picked))

    def _grad(self, w, idx):
        X, a, z = self._forward(w, idx)
        dz = (softmax(z, axis=1) - self._onehot(idx)) / len(idx)
        return self._backward(w, X, a, dz)

    def _directional(self, w, X, a, v):
        """Forward-mode derivatives of hidden activations and logits along v."""
        W1, _, W2, _ = self._unpack(w)
        V1, c1, V2, c2 = self._unpack(v)
        if W1 is None:
            return None, X @ V2.T + c2
        Ra = (1.0 - a * a) * (X @ V1.T + c1)
        return Ra, Ra @ W2.T + a @ V2.T + c2

    def _hvp(self, w, idx, v):
        W1, _, W2, _ = self._unpack(w)
        V1, _, V2, _ = self._unpack(v)
        X, a, z = self._forward(w, idx)
        B = len(idx)
        p = softmax(z, axis=1)
        dz = (p - self._onehot(idx)) / B
        Ra, Rz = self._directional(w, X, a, v)
        Rdz = p * (Rz - (p * Rz).sum(1, keepdims=True)) / B
        RgW2 = Rdz.T @ a
        Rgb2 = Rdz.sum(0)
        if W1 is None:
            return np.concatenate([RgW2.ravel(), Rgb2])
        RgW2 = RgW2 + dz.T @ Ra
        da = dz @ W2
        Rda = Rdz @ W2 + dz @ V2
        Rdz1 = Rda * (1.0 - a * a) - 2.0 * a * Ra * da
        return np.concatenate([(Rdz1.T @ X).ravel(), Rdz1.sum(0), RgW2.ravel(), Rgb2])

    def _ggn(self, w, idx, v):
        X, a, z = self._forward(w, idx)
        B = len(idx)
        p = softmax(z, axis=1)
        _, Jv = self._directional(w, X, a, v)
        if self.ggn_mode == "logits":
            u = p * (Jv - (p * Jv).sum(1, keepdims=True)) / B
        else:
            # J_p v through the softmax, then diag(b / p^2) / |S|, then back
            Jp = p * (Jv - (p * Jv).sum(1, keepdims=True))
            up = self._onehot(idx) * Jp / (p * p) / B
            u = p * (up - (p * up).sum(1, keepdims=True))
        return self._backward(w, X, a, u)

    def predict(self, w, X):
        W1, b1, W2, b2 = self._unpack(np.asarray(w, dtype=float))
        X = X.toarray() if hasattr(X, "toarray") else np.asarray(X)
        a = X if W1 is None else np.tanh(X @ W1.T + b1)
        return np.argmax(a @ W2.T + b2, axis=1)

    def test_error(self, w, data):
        return float(np.mean(self.predict(w, data.features) != np.asarray(data.labels)))
