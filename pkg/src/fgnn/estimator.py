"""Scikit-learn style front end for the FGNN recommender."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .evaluation import evaluate
from .model import ModelParams, make_batch, score_batch, topk_rows
from .train import AdamState, TrainingConfig, checkpoint_load, checkpoint_save, train
from .validation import check_is_fitted, check_labels, check_sequences, examples_to_xy, infer_n_items


class FGNNRecommender(BaseEstimator):
    """Next-item recommender over session graphs.

    ``X`` is a list of item-index sequences (session prefixes) and ``y`` the
    index of the item clicked next. ``predict`` returns the top-1 item,
    ``predict_proba`` the softmax over all ``n_items_`` items.
    """

    method_name = "FGNN"

    def __init__(self, dim=100, layers=3, heads=8, steps=3, combine="mean", readout="set2set",
                 edge_weight_norm="none", selfloop_clamp=False, lr=1e-3, decay_factor=0.1,
                 decay_every=3, schedule="step", l2=1e-5, batch_size=100, epochs=10, seed=0,
                 init_std=0.1, n_items=None, eval_batch_size=200):
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.steps = steps
        self.combine = combine
        self.readout = readout
        self.edge_weight_norm = edge_weight_norm
        self.selfloop_clamp = selfloop_clamp
        self.lr = lr
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.schedule = schedule
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.init_std = init_std
        self.n_items = n_items
        self.eval_batch_size = eval_batch_size

    def training_config(self) -> TrainingConfig:
        keys = TrainingConfig.__dataclass_fields__
        return TrainingConfig(**{k: v for k, v in self.get_params().items() if k in keys})

    def fit(self, X, y, eval_set=None, on_epoch=None):
        """Train on (prefix, label) rows. ``eval_set`` is an optional list of
        TrainingExample whose R@20/MRR@20 is logged after every epoch."""
        config = self.training_config()
        X = check_sequences(X)
        y = check_labels(y, len(X))
        m = self.n_items or infer_n_items(X, y)
        check_sequences(X, m)
        check_labels(y, len(X), m)
        self.n_items_ = m

        eval_fn = None
        if eval_set:
            def eval_fn(params):
                self.params_ = params
                report = evaluate(self, eval_set, ks=(20,), batch_size=self.eval_batch_size)
                return {"test_recall@20": report.recall[20], "test_mrr@20": report.mrr[20]}

        self.params_, self.history_, self.optimizer_state_ = train(
            config, X, y, m, eval_fn=eval_fn, on_epoch=on_epoch)
        return self

    def fit_examples(self, examples, eval_set=None, on_epoch=None):
        X, y = examples_to_xy(examples)
        return self.fit(X, y, eval_set=eval_set, on_epoch=on_epoch)

    def score_sequences(self, X) -> np.ndarray:
        """Raw scores ẑ, shape (n_samples, n_items_)."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.n_items_)
        out = []
        for start in range(0, len(X), self.eval_batch_size):
            batch = make_batch(self.params_, X[start:start + self.eval_batch_size])
            out.append(score_batch(self.params_, batch).data)
        return np.concatenate(out)

    def predict_proba(self, X) -> np.ndarray:
        return ad.softmax(self.score_sequences(X), axis=1)

    def predict_topk(self, X, k: int = 20) -> list:
        return [list(map(int, row)) for row in topk_rows(self.score_sequences(X), k)]

    def predict(self, X) -> np.ndarray:
        return topk_rows(self.score_sequences(X), 1)[:, 0]

    def score(self, X, y, k: int = 20) -> float:
        """MRR@k, so larger is better as scikit-learn expects."""
        from .data import TrainingExample

        X = check_sequences(X)
        y = check_labels(y, len(X))
        examples = [TrainingExample(tuple(p), int(l)) for p, l in zip(X, y)]
        return evaluate(self, examples, ks=(k,), batch_size=self.eval_batch_size).mrr[k]

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        checkpoint_save(self.params_, path, getattr(self, "optimizer_state_", None),
                        config=self.training_config().to_dict())

    @classmethod
    def load(cls, path) -> "FGNNRecommender":
        params, state, manifest = checkpoint_load(path)
        known = cls().get_params()
        est = cls(**{k: v for k, v in manifest.get("config", {}).items() if k in known})
        est.set_params(n_items=params.n_items)
        est.params_ = params
        est.n_items_ = params.n_items
        est.optimizer_state_ = state or AdamState()
        return est

    @classmethod
    def from_params(cls, params: ModelParams, **kwargs) -> "FGNNRecommender":
        cfg = params.config
        est = cls(dim=cfg.dim, layers=cfg.layers, heads=cfg.heads, steps=cfg.steps, combine=cfg.combine,
                  readout=cfg.readout, edge_weight_norm=cfg.edge_weight_norm,
                  selfloop_clamp=cfg.selfloop_clamp, n_items=params.n_items, **kwargs)
        est.params_ = params
        est.n_items_ = params.n_items
        return est
