"""Graph-level readouts: the GRU-driven Set2Set reader and ablation variants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, UsageError
from .layers import GRUCellParams, gru_cell, init_gaussian
from .session_graph import GraphBatch

READOUTS = ("set2set", "mean", "sum", "max", "last_attention")


@dataclass
class ReadoutParams:
    gru: GRUCellParams
    steps: int = 3

    def tensors(self) -> dict:
        return {f"gru.{k}": v for k, v in self.gru.tensors().items()}

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, steps: int = 3, std: float = 0.1):
        if steps < 1:
            raise UsageError("readout needs at least one processing step")
        return cls(GRUCellParams.init(2 * dim, dim, rng, std=std), steps)


@dataclass
class LastAttentionParams:
    """e_i = v · σ(A x_last + B x_i + c)."""

    a: Tensor
    b: Tensor
    c: Tensor
    v: Tensor

    def tensors(self) -> dict:
        return {"A": self.a, "B": self.b, "c": self.c, "v": self.v}

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, std: float = 0.1):
        return cls(init_gaussian((dim, dim), rng, std=std), init_gaussian((dim, dim), rng, std=std),
                   init_gaussian((dim,), rng, std=std), init_gaussian((dim,), rng, std=std))


def _as_batch(node_features: Tensor, batch: Optional[GraphBatch]) -> tuple:
    n = node_features.shape[0]
    if n == 0:
        raise ContractError("readout needs at least one node")
    if batch is None:
        return np.zeros(n, np.intp), 1
    return batch.node_graph, batch.n_graphs


def set2set_readout(params: ReadoutParams, node_features, batch: GraphBatch = None,
                    trace: list = None) -> Tensor:
    """Order-learning reader; returns q*_T with shape (B, 2d), or (2d,) without a batch.

    Each step: q_t = GRU(q*_{t-1}, q_{t-1}), a = softmax_i ⟨x_i, q_t⟩,
    r_t = Σ_i a_i x_i, q*_t = q_t ‖ r_t. Both q*_0 and the hidden state start at 0.
    """
    x = ad.as_tensor(node_features)
    owner, n_graphs = _as_batch(x, batch)
    d = x.shape[1]
    q_star = Tensor(np.zeros((n_graphs, 2 * d)))
    q = Tensor(np.zeros((n_graphs, d)))
    for _ in range(params.steps):
        q = gru_cell(params.gru, q_star, q)
        scores = (x * ad.gather_rows(q, owner)).sum(axis=1)
        a = ad.segment_softmax(scores, owner, n_graphs)
        if trace is not None:
            trace.append(a)
        r = ad.segment_sum(x * a.reshape(-1, 1), owner, n_graphs)
        q_star = ad.concat_cols([q, r])
    return q_star if batch is not None else q_star.reshape(-1)


def pool_readout(node_features, mode: str, batch: GraphBatch = None) -> Tensor:
    """Coordinate-wise mean, sum or max over each graph's nodes."""
    x = ad.as_tensor(node_features)
    owner, n_graphs = _as_batch(x, batch)
    if mode == "sum":
        out = ad.segment_sum(x, owner, n_graphs)
    elif mode == "mean":
        counts = np.bincount(owner, minlength=n_graphs).astype(np.float64)
        out = ad.segment_sum(x, owner, n_graphs) * Tensor(1.0 / counts[:, None])
    elif mode == "max":
        out = ad.segment_max(x, owner, n_graphs)
    else:
        raise UsageError(f"unknown pooling mode {mode!r}")
    return out if batch is not None else out.reshape(-1)


def last_item_attention_readout(params: LastAttentionParams, node_features, last_node,
                                batch: GraphBatch = None) -> Tensor:
    """Attention of every node against the last-clicked node; returns s_global ‖ x_last."""
    x = ad.as_tensor(node_features)
    owner, n_graphs = _as_batch(x, batch)
    last = np.atleast_1d(np.asarray(last_node, np.intp))
    if last.shape[0] != n_graphs or (last < 0).any() or (last >= x.shape[0]).any():
        raise ContractError(f"invalid last_node {last_node!r} for {x.shape[0]} nodes")
    x_last = ad.gather_rows(x, last)
    hidden = ad.sigmoid(ad.gather_rows(x_last @ params.a.T, owner) + x @ params.b.T + params.c)
    e = (hidden @ params.v.reshape(-1, 1)).reshape(-1)
    a = ad.segment_softmax(e, owner, n_graphs)
    s_global = ad.segment_sum(x * a.reshape(-1, 1), owner, n_graphs)
    out = ad.concat_cols([s_global, x_last])
    return out if batch is not None else out.reshape(-1)
