"""Bounded curvature-pair history with the cautious acceptance rule."""

from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray

    @property
    def ys(self):
        return float(np.dot(self.y, self.s))


class LbfgsMemory:
    """Ring buffer of at most ``capacity`` (s, y) pairs, oldest first.

    A pair is stored only if ``y.s >= epsilon * ||s||^2`` and ``s != 0``;
    otherwise the push is skipped and the buffer is left untouched.
    """

    def __init__(self, capacity=10, epsilon=DEFAULT_EPSILON):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        if not epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.capacity = int(capacity)
        self.epsilon = float(epsilon)
        self._pairs = deque(maxlen=self.capacity) if self.capacity else deque()

    def __len__(self):
        return len(self._pairs)

    def __iter__(self):
        return iter(self._pairs)

    def __getitem__(self, i):
        return self._pairs[i]

    @property
    def pairs(self):
        return list(self._pairs)

    @property
    def full(self):
        return len(self._pairs) == self.capacity

    @property
    def dim(self):
        return self._pairs[0].s.shape[0] if self._pairs else None

    @property
    def S(self):
        """Stacked displacements, shape (len, d), oldest row first."""
        return np.array([p.s for p in self._pairs])

    @property
    def Y(self):
        return np.array([p.y for p in self._pairs])

    def accepts(self, s, y):
        ss = float(np.dot(s, s))
        if ss == 0.0:
            return False
        return float(np.dot(y, s)) >= self.epsilon * ss

    def push(self, s, y):
        """Try to append the pair (s, y); return True if it was stored."""
        s = np.array(s, dtype=float)
        y = np.array(y, dtype=float)
        if s.ndim != 1 or s.shape != y.shape:
            raise ValueError(f"pair shape mismatch: s{s.shape} vs y{y.shape}")
        if self._pairs and s.shape[0] != self.dim:
            raise ValueError(f"pair dimension {s.shape[0]} != memory dimension {self.dim}")
        if self.capacity == 0 or not self.accepts(s, y):
            return False
        s.flags.writeable = False
        y.flags.writeable = False
        self._pairs.append(CurvaturePair(s, y))
        return True

    def clear(self):
        self._pairs.clear()

    def copy(self):
        other = LbfgsMemory(self.capacity, self.epsilon)
        other._pairs.extend(self._pairs)
        return other

    def base_vectors(self, g, strict=False):
        """Return [s_1..s_m, y_1..y_m, g] with m the current pair count.

        With ``strict=True`` the memory must be full, i.e. m equals the
        configured capacity.
        """
        if strict and not self.full:
            raise ValueError(
                f"memory holds {len(self)} of {self.capacity} pairs; "
                "use the pair count as effective m or pass strict=False")
        g = np.asarray(g, dtype=float)
        if self._pairs and g.shape != (self.dim,):
            raise ValueError(f"g has shape {g.shape}, expected ({self.dim},)")
        return [p.s for p in self._pairs] + [p.y for p in self._pairs] + [g]
