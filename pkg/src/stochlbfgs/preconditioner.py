"""ADAM moment estimates used as momentum gradient and diagonal H0."""

import numpy as np

ADAM_EPS = 1e-8


class AdamState:
    """First/second moment accumulators with bias correction.

    ``update(g)`` advances the state by one step and returns the corrected
    moments ``(m_hat, v_hat)``. Both moments decay with their own rate
    (``beta1`` for m, ``beta2`` for v).
    """

    def __init__(self, dim, beta1=0.9, beta2=0.999, eps_stab=ADAM_EPS):
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps_stab = float(eps_stab)
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.step_count = 0

    def update(self, g):
        g = np.asarray(g, dtype=float)
        if g.shape != self.m.shape:
            raise ValueError(f"gradient shape {g.shape} != state shape {self.m.shape}")
        self.step_count += 1
        k = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (g * g)
        # beta**k underflows to 0.0 for large k, which is the correct limit
        m_hat = self.m / (1.0 - self.beta1 ** k)
        v_hat = self.v / (1.0 - self.beta2 ** k)
        return m_hat, v_hat

    def direction(self, m_hat, v_hat):
        """Plain ADAM step direction -m_hat / (sqrt(v_hat) + eps)."""
        return -h0_apply(v_hat, m_hat, self.eps_stab)


def h0_apply(v_hat, q, eps=ADAM_EPS):
    """Apply H0 = diag(1 / (sqrt(v_hat) + eps)) to ``q``."""
    return q / (np.sqrt(v_hat) + eps)


class DiagonalH0:
    """Callable diagonal initial scaling built from a frozen ``v_hat``."""

    def __init__(self, v_hat, eps=ADAM_EPS):
        self.diag = 1.0 / (np.sqrt(np.asarray(v_hat, dtype=float)) + eps)
        self._v_hat = np.asarray(v_hat, dtype=float)
        self.eps = eps

    def __call__(self, q):
        return h0_apply(self._v_hat, q, self.eps)

    @property
    def sigma(self):
        return float(self.diag.min())

    @property
    def Sigma(self):
        return float(self.diag.max())

    def matrix(self, d=None):
        return np.diag(self.diag)


class ScalarH0:
    """H0 = gamma * I."""

    def __init__(self, gamma=1.0):
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.gamma = float(gamma)

    def __call__(self, q):
        return self.gamma * q

    @property
    def sigma(self):
        return self.gamma

    @property
    def Sigma(self):
        return self.gamma

    def matrix(self, d):
        return self.gamma * np.eye(d)
