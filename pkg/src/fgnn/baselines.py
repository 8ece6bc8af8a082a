"""Frequency and co-occurrence baselines: POP, S-POP and Item-KNN.

All three follow the estimator protocol: ``fit(X, y)`` on augmented
(prefix, label) rows, then ``score_sequences`` / ``predict_topk``.
Training rows are collapsed back into sessions before counting, so a long
session is not counted once per prefix.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .model import topk_rows
from .validation import check_is_fitted, check_labels, check_sequences, infer_n_items, sessions_from_xy


class _SessionRanker(BaseEstimator):
    method_name = "base"

    def _prepare(self, X, y, n_items):
        X = check_sequences(X)
        y = check_labels(y, len(X))
        m = n_items or infer_n_items(X, y)
        check_sequences(X, m)
        check_labels(y, len(X), m)
        self.n_items_ = m
        return sessions_from_xy(X, y)

    def predict_topk(self, X, k: int = 20) -> list:
        return [list(map(int, row)) for row in topk_rows(self.score_sequences(X), k)]

    def predict(self, X) -> np.ndarray:
        return topk_rows(self.score_sequences(X), 1)[:, 0]


class PopRecommender(_SessionRanker):
    """Global click popularity over the training sessions."""

    method_name = "POP"

    def __init__(self, n_items: int = None):
        self.n_items = n_items

    def fit(self, X, y):
        sessions = self._prepare(X, y, self.n_items)
        counts = np.zeros(self.n_items_)
        for s in sessions:
            np.add.at(counts, list(s), 1.0)
        self.popularity_ = counts
        return self

    def score_sequences(self, X) -> np.ndarray:
        check_is_fitted(self, "popularity_")
        X = check_sequences(X, self.n_items_)
        return np.tile(self.popularity_, (len(X), 1))


class SPopRecommender(_SessionRanker):
    """Within-session popularity, backfilled with global popularity."""

    method_name = "S-POP"

    def __init__(self, n_items: int = None):
        self.n_items = n_items

    def fit(self, X, y):
        pop = PopRecommender(self.n_items).fit(X, y)
        self.n_items_ = pop.n_items_
        self.popularity_ = pop.popularity_
        order = topk_rows(pop.popularity_, self.n_items_)[0]
        # strictly decreasing tie-breaker in (0, 1) that follows POP order
        backfill = np.empty(self.n_items_)
        backfill[order] = (self.n_items_ - np.arange(self.n_items_)) / (self.n_items_ + 1)
        self.backfill_ = backfill
        return self

    def score_sequences(self, X) -> np.ndarray:
        check_is_fitted(self, "backfill_")
        X = check_sequences(X, self.n_items_)
        scores = np.tile(self.backfill_, (len(X), 1))
        for row, seq in enumerate(X):
            np.add.at(scores[row], list(seq), 1.0)
        return scores


class ItemKNNRecommender(_SessionRanker):
    """Regularised cosine similarity over binary session-item incidence.

    sim(i, j) = cooc(i, j) / (sqrt(supp(i)) * sqrt(supp(j)) + reg), i != j.
    A prefix scores candidate j by summing sim(i, j) over its distinct items.
    """

    method_name = "Item-KNN"

    def __init__(self, reg: float = 20.0, exclude_seen: bool = False, n_items: int = None):
        self.reg = reg
        self.exclude_seen = exclude_seen
        self.n_items = n_items

    def fit(self, X, y):
        sessions = self._prepare(X, y, self.n_items)
        m = self.n_items_
        rows, cols = [], []
        for r, s in enumerate(sessions):
            items = sorted(set(s))
            rows.extend([r] * len(items))
            cols.extend(items)
        incidence = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(sessions), m))
        cooc = (incidence.T @ incidence).tocoo()
        support = np.asarray(incidence.sum(axis=0)).ravel()
        keep = cooc.row != cooc.col
        r, c, v = cooc.row[keep], cooc.col[keep], cooc.data[keep]
        sim = v / (np.sqrt(support[r]) * np.sqrt(support[c]) + self.reg)
        self.similarity_ = sp.csr_matrix((sim, (r, c)), shape=(m, m))
        self.support_ = support
        return self

    def similarity(self, i: int, j: int) -> float:
        check_is_fitted(self, "similarity_")
        return float(self.similarity_[i, j])

    def score_sequences(self, X) -> np.ndarray:
        check_is_fitted(self, "similarity_")
        X = check_sequences(X, self.n_items_)
        rows = [r for r, seq in enumerate(X) for _ in set(seq)]
        cols = [v for seq in X for v in sorted(set(seq))]
        query = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(X), self.n_items_))
        scores = np.asarray((query @ self.similarity_).todense())
        if self.exclude_seen:
            scores[query.toarray() > 0] = -np.inf
        return scores
