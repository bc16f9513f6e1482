"""Clustering agreement and summary statistics for experiment reports."""
from __future__ import annotations

from itertools import permutations
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import confusion_matrix

from .errors import InvalidArgumentError

MAX_ENUMERATED_COMPONENTS = 8


def _as_labels(values: ArrayLike, name: str) -> np.ndarray:
    labels = np.asarray(values)
    if labels.ndim != 1:
        raise InvalidArgumentError("invalid_labels_shape", detail=name)
    if labels.size and (not np.all(np.equal(np.mod(labels, 1), 0)) or labels.min() < 1):
        raise InvalidArgumentError("labels_not_positive_integers", detail=name)
    return labels.astype(np.int64)


def misclassification_error(predicted: ArrayLike, truth: ArrayLike) -> float:
    """Smallest mismatch fraction over all relabelings of ``predicted``.

    Up to eight classes every permutation is enumerated; beyond that the
    matching is solved as an assignment problem, which has the same optimum.
    """
    predicted = _as_labels(predicted, "predicted")
    truth = _as_labels(truth, "truth")
    if predicted.size != truth.size:
        raise InvalidArgumentError("labels_length_mismatch")
    if predicted.size == 0:
        raise InvalidArgumentError("empty_labels")

    n_classes = int(max(predicted.max(), truth.max()))
    table = confusion_matrix(truth, predicted, labels=np.arange(1, n_classes + 1))
    if n_classes <= MAX_ENUMERATED_COMPONENTS:
        orders = np.array(list(permutations(range(n_classes))))
        agreements = table[np.arange(n_classes), orders].sum(axis=1)
        best = int(agreements.max())
    else:
        rows, cols = linear_sum_assignment(table, maximize=True)
        best = int(table[rows, cols].sum())
    return 1.0 - best / predicted.size


def five_number_summary(values: ArrayLike) -> Tuple[float, float, float, float, float]:
    """(min, Q1, median, Q3, max) with linearly interpolated quartiles."""
    data = np.asarray(values, dtype=float).ravel()
    data = data[np.isfinite(data)]
    if data.size == 0:
        raise InvalidArgumentError("empty_sample")
    quantiles = np.percentile(data, [0, 25, 50, 75, 100])
    return tuple(float(value) for value in quantiles)  # type: ignore[return-value]


__all__ = ["misclassification_error", "five_number_summary"]
