from .base import FiniteSumProblem, UnsupportedLossError
from .data import (
    Dataset,
    LibsvmParseError,
    parse_libsvm,
    sample_batch,
    synth_dataset,
    to_binary_labels,
    train_test_split,
)
from .linear import LeastSquares, LogisticRegression
from .mlp import MLPClassifier


def make_problem(kind, data, **kwargs):
    """Build a problem oracle by name: logistic, least_squares, mlp, softmax."""
    kind = kind.replace("-", "_")
    if kind == "logistic":
        return LogisticRegression(data, **kwargs)
    if kind in ("least_squares", "lsq"):
        return LeastSquares(data, **kwargs)
    if kind in ("mlp", "mlp_cross_entropy"):
        return MLPClassifier(data, **kwargs)
    if kind == "softmax":
        kwargs["hidden"] = 0
        return MLPClassifier(data, **kwargs)
    raise ValueError(f"unknown problem kind {kind!r}")


__all__ = [
    "Dataset",
    "FiniteSumProblem",
    "LeastSquares",
    "LibsvmParseError",
    "LogisticRegression",
    "MLPClassifier",
    "UnsupportedLossError",
    "make_problem",
    "parse_libsvm",
    "sample_batch",
    "synth_dataset",
    "to_binary_labels",
    "train_test_split",
]
