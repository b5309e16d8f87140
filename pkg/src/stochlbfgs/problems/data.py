"""Datasets: libsvm parsing, synthetic generators, splitting and batch sampling."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class LibsvmParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Dataset:
    features: object  # ndarray (n, d) or scipy.sparse CSR matrix
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        vals = self.features.data if sp.issparse(self.features) else self.features
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(self.labels)):
            raise ValueError("dataset contains NaN or Inf")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def is_sparse(self):
        return sp.issparse(self.features)

    def dense_features(self):
        return self.features.toarray() if self.is_sparse else np.asarray(self.features)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], dict(self.meta))


def parse_libsvm(path, n_features=None):
    """Read a libsvm/svmlight text file into a CSR-backed :class:`Dataset`.

    Each line is ``label idx:val idx:val ...`` with 1-based, increasing
    feature indices. Blank lines and ``#`` comments are ignored. The
    feature dimension is the largest index seen unless ``n_features`` is
    given.
    """
    labels, rows, cols, vals = [], [], [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
            r = len(labels)
            prev = 0
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise LibsvmParseError(lineno, f"expected idx:val, got {tok!r}")
                try:
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise LibsvmParseError(lineno, f"bad feature {tok!r}") from None
                if idx < 1:
                    raise LibsvmParseError(lineno, f"feature index {idx} < 1")
                if idx <= prev:
                    raise LibsvmParseError(lineno, "feature indices must increase")
                if not np.isfinite(val):
                    raise LibsvmParseError(lineno, f"non-finite value {tok!r}")
                prev = idx
                rows.append(r)
                cols.append(idx - 1)
                vals.append(val)
            max_idx = max(max_idx, prev)
            labels.append(label)
    if not labels:
        raise LibsvmParseError(0, f"no samples in {path}")
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise ValueError(f"n_features={d} but file uses index {max_idx}")
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), d), dtype=float)
    return Dataset(X, np.array(labels), {"source": str(path)})


def to_binary_labels(labels):
    """Map {0,1} or {-1,+1} labels onto {-1,+1}."""
    labels = np.asarray(labels, dtype=float)
    uniq = set(np.unique(labels).tolist())
    if uniq <= {-1.0, 1.0}:
        return labels
    if uniq <= {0.0, 1.0}:
        return 2.0 * labels - 1.0
    raise ValueError(f"labels {sorted(uniq)} are not binary")


_KIND_ALIASES = {
    "logistic": "logistic",
    "least_squares": "least_squares",
    "least-squares": "least_squares",
    "lsq": "least_squares",
    "mlp": "multiclass",
    "softmax": "multiclass",
    "multiclass": "multiclass",
    "mlp-cross-entropy": "multiclass",
}


def synth_dataset(kind, n, d, seed=0, noise=0.0, n_classes=3):
    """Reproducible Gaussian-design data with a planted model.

    ``least_squares``: b = A w + noise * N(0, 1).
    ``logistic``: b = sign(A w / sqrt(d) + noise * N(0, 1)) in {-1, +1}.
    ``multiclass`` (alias ``mlp``): b = argmax(A W^T / sqrt(d) + noise * Gumbel).
    The planted parameters are stored in ``meta["planted"]``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    try:
        kind = _KIND_ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}") from None
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    meta = {"kind": kind, "seed": seed, "noise": noise, "generator": "gaussian-planted"}
    if kind == "least_squares":
        w = rng.standard_normal(d)
        b = A @ w + noise * rng.standard_normal(n)
    elif kind == "logistic":
        w = rng.standard_normal(d)
        z = A @ w / np.sqrt(d) + noise * rng.standard_normal(n)
        b = np.where(z >= 0, 1.0, -1.0)
    else:
        w = rng.standard_normal((n_classes, d))
        z = A @ w.T / np.sqrt(d) + noise * rng.gumbel(size=(n, n_classes))
        b = np.argmax(z, axis=1)
        meta["n_classes"] = n_classes
    meta["planted"] = w
    return Dataset(A, b, meta)


def train_test_split(data, test_fraction=0.2, seed=0):
    """Deterministic random split; returns ``(train, test)``."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_test = int(round(test_fraction * data.n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return data.subset(train_idx), data.subset(test_idx)


def sample_batch(n, b, rng):
    """Uniform size-``b`` subset of range(n) drawn without replacement (sorted)."""
    if not 1 <= b <= n:
        raise ValueError(f"batch size must satisfy 1 <= b <= n, got b={b}, n={n}")
    if b == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=b, replace=False))
