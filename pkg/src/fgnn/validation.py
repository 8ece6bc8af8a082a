"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .exceptions import NotFittedError, UsageError


def check_sequences(X, n_items: int = None) -> list:
    """Coerce X to a list of non-empty integer tuples, optionally range-checked."""
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        raise UsageError("X must be a sequence of item sequences, not a flat array")
    try:
        seqs = [tuple(int(v) for v in seq) for seq in X]
    except TypeError:
        raise UsageError("X must be a sequence of item sequences") from None
    if not seqs:
        raise UsageError("X is empty")
    for i, seq in enumerate(seqs):
        if not seq:
            raise UsageError(f"sequence {i} is empty")
        if n_items is not None:
            bad = [v for v in seq if not 0 <= v < n_items]
            if bad:
                raise IndexError(f"sequence {i}: item {bad[0]} outside 0..{n_items - 1}")
    return seqs


def check_labels(y, n_samples: int, n_items: int = None) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1 or labels.shape[0] != n_samples:
        raise UsageError(f"y must hold one label per sequence ({n_samples}), got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        raise UsageError("labels must be integer item indices")
    labels = labels.astype(np.intp)
    if n_items is not None and labels.size and (labels.min() < 0 or labels.max() >= n_items):
        raise IndexError(f"label outside 0..{n_items - 1}")
    return labels


def infer_n_items(X, y=None) -> int:
    top = max(max(seq) for seq in X)
    if y is not None and len(y):
        top = max(top, int(np.max(y)))
    return int(top) + 1


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit() first")


def examples_to_xy(examples) -> tuple:
    return [ex.prefix for ex in examples], np.array([ex.label for ex in examples], np.intp)


def sessions_from_xy(X, y) -> list:
    """Collapse augmented (prefix, label) rows back into sessions.

    Rows are consumed in order; a row continues the current session when its
    prefix equals the previous row's prefix plus label.
    """
    sessions, current = [], None
    for prefix, label in zip(X, y):
        prefix = tuple(prefix)
        if current is not None and prefix == current:
            current = current + (int(label),)
            sessions[-1] = current
        else:
            current = prefix + (int(label),)
            sessions.append(current)
    return sessions
