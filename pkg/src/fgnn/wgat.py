"""Weighted graph attention (WGAT) over batched session graphs.

For a directed edge ``j -> i`` with weight ``w_ij`` and head ``k``::

    e_ij  = LeakyReLU_0.2(att_k · [W_k x_i ‖ W_k x_j ‖ w_ij])
    α_ij  = softmax of e_ij over the in-neighbourhood of i
    x'_i  = ReLU(Σ_j α_ij W_k x_j)

Heads are either averaged before a single outer ReLU (``mean``) or passed
through ReLU separately and concatenated (``concat``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError, UsageError
from .layers import init_gaussian
from .session_graph import GraphBatch

COMBINE_MODES = ("mean", "concat")
LEAKY_SLOPE = 0.2


@dataclass
class WgatLayerParams:
    weights: list  # per head, Tensor[d' x d]
    att: list  # per head, Tensor[2d' + 1]
    combine: str = "mean"

    @property
    def heads(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def head_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.head_dim * (self.heads if self.combine == "concat" else 1)

    def tensors(self) -> dict:
        out = {}
        for k, (w, a) in enumerate(zip(self.weights, self.att)):
            out[f"head{k}.W"] = w
            out[f"head{k}.att"] = a
        return out

    @classmethod
    def init(cls, in_dim: int, out_dim: int, heads: int, rng: np.random.Generator,
             combine: str = "mean", std: float = 0.1) -> "WgatLayerParams":
        if combine not in COMBINE_MODES:
            raise UsageError(f"unknown combine mode {combine!r}; expected one of {COMBINE_MODES}")
        weights = [init_gaussian((out_dim, in_dim), rng, std=std) for _ in range(heads)]
        att = [init_gaussian((2 * out_dim + 1,), rng, std=std) for _ in range(heads)]
        return cls(weights, att, combine)


def _project(params: WgatLayerParams, k: int, features: Tensor) -> Tensor:
    if features.ndim != 2 or features.shape[1] != params.in_dim:
        raise DimensionError(f"WGAT layer expects features (*, {params.in_dim}), got {features.shape}")
    return features @ params.weights[k].T


def attention_logits(params: WgatLayerParams, k: int, features: Tensor, batch: GraphBatch,
                     projected: Tensor = None) -> Tensor:
    """Per-edge scores e_ij (one per entry of ``batch.src``), shape (E,)."""
    if features.shape[0] != batch.n_nodes:
        raise DimensionError(f"{features.shape[0]} feature rows for {batch.n_nodes} nodes")
    h = projected if projected is not None else _project(params, k, features)
    w = Tensor(batch.weight.reshape(-1, 1))
    pair = ad.concat_cols([ad.gather_rows(h, batch.dst), ad.gather_rows(h, batch.src), w])
    scores = pair @ params.att[k].reshape(-1, 1)
    return ad.leaky_relu(scores.reshape(-1), LEAKY_SLOPE)


def attention_normalize(logits: Tensor, batch: GraphBatch) -> Tensor:
    return ad.segment_softmax(logits, batch.dst, batch.n_nodes)


def _head_sum(alpha: Tensor, projected: Tensor, batch: GraphBatch) -> Tensor:
    messages = ad.gather_rows(projected, batch.src) * alpha.reshape(-1, 1)
    return ad.segment_sum(messages, batch.dst, batch.n_nodes)


def head_aggregate(params: WgatLayerParams, k: int, alpha: Tensor, features: Tensor,
                   batch: GraphBatch) -> Tensor:
    """ReLU(Σ_j α_ij W_k x_j) for one head."""
    return ad.relu(_head_sum(alpha, _project(params, k, features), batch))


def wgat_forward(params: WgatLayerParams, features: Tensor, batch: GraphBatch,
                 combine: str = None, trace: list = None) -> Tensor:
    """One WGAT layer. ``trace``, when given, collects the per-head α tensors."""
    combine = combine or params.combine
    if combine not in COMBINE_MODES:
        raise UsageError(f"unknown combine mode {combine!r}; expected one of {COMBINE_MODES}")
    head_out = []
    for k in range(params.heads):
        h = _project(params, k, features)
        alpha = attention_normalize(attention_logits(params, k, features, batch, projected=h), batch)
        if trace is not None:
            trace.append(alpha)
        summed = _head_sum(alpha, h, batch)
        head_out.append(summed if combine == "mean" else ad.relu(summed))
    if combine == "concat":
        return head_out[0] if len(head_out) == 1 else ad.concat_cols(head_out)
    total = head_out[0]
    for extra in head_out[1:]:
        total = total + extra
    if params.heads > 1:
        total = ad.scale(total, 1.0 / params.heads)
    return ad.relu(total)
