"""FGNN forward pass: embedding, stacked WGAT layers, readout, tied-weight scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError, UsageError
from .layers import EmbeddingTable, embed_lookup, init_gaussian
from .readout import (
    READOUTS,
    LastAttentionParams,
    ReadoutParams,
    last_item_attention_readout,
    pool_readout,
    set2set_readout,
)
from .session_graph import GraphBatch, SessionGraph, build_graph
from .wgat import COMBINE_MODES, WgatLayerParams, wgat_forward


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 100
    layers: int = 3
    heads: int = 8
    steps: int = 3
    combine: str = "mean"
    readout: str = "set2set"
    edge_weight_norm: str = "none"
    selfloop_clamp: bool = False
    init_std: float = 0.1

    def __post_init__(self):
        if self.combine not in COMBINE_MODES:
            raise UsageError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.readout not in READOUTS:
            raise UsageError(f"readout must be one of {READOUTS}, got {self.readout!r}")
        if self.edge_weight_norm not in ("none", "out-degree"):
            raise UsageError(f"edge_weight_norm must be 'none' or 'out-degree', got {self.edge_weight_norm!r}")
        for key in ("dim", "layers", "heads", "steps"):
            if getattr(self, key) < 1:
                raise UsageError(f"{key} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    embedding: EmbeddingTable
    wgat_layers: list
    readout: Optional[ReadoutParams]
    w_out: Tensor
    last_attention: Optional[LastAttentionParams] = None

    @property
    def n_items(self) -> int:
        return self.embedding.n_items

    def named_tensors(self) -> dict:
        """All learnable tensors in a fixed order (the checkpoint and optimizer order)."""
        out = {"embedding": self.embedding.weights}
        for i, layer in enumerate(self.wgat_layers):
            for name, t in layer.tensors().items():
                out[f"wgat{i}.{name}"] = t
        if self.readout is not None:
            for name, t in self.readout.tensors().items():
                out[f"readout.{name}"] = t
        if self.last_attention is not None:
            for name, t in self.last_attention.tensors().items():
                out[f"last_attention.{name}"] = t
        out["w_out"] = self.w_out
        return out

    def parameters(self) -> list:
        return list(self.named_tensors().values())

    def zero_grad(self) -> None:
        ad.zero_grad(self.parameters())

    @classmethod
    def init(cls, config: ModelConfig, n_items: int, rng: np.random.Generator) -> "ModelParams":
        """Gaussian(0, init_std) everywhere except the readout GRU's orthogonal hidden blocks."""
        if n_items < 1:
            raise UsageError("vocabulary must contain at least one item")
        d, std = config.dim, config.init_std
        embedding = EmbeddingTable(init_gaussian((n_items, d), rng, std=std, name="embedding"))
        layers, width = [], d
        for i in range(config.layers):
            last = i == config.layers - 1
            combine = config.combine if (config.combine == "mean" or not last) else "mean"
            layer = WgatLayerParams.init(width, d, config.heads, rng, combine=combine, std=std)
            layers.append(layer)
            width = layer.out_dim
        readout = ReadoutParams.init(d, rng, steps=config.steps, std=std) if config.readout == "set2set" else None
        last_att = LastAttentionParams.init(d, rng, std=std) if config.readout == "last_attention" else None
        out_in = d if config.readout in ("mean", "sum", "max") else 2 * d
        w_out = init_gaussian((d, out_in), rng, std=std, name="w_out")
        return cls(config, embedding, layers, readout, w_out, last_att)


@dataclass
class RankedResult:
    scores: np.ndarray
    probabilities: np.ndarray
    topk: list = field(default_factory=list)


def graph_embedding(params: ModelParams, batch: GraphBatch, trace: dict = None) -> Tensor:
    """Run embedding, WGAT stack and readout; returns (B, 2d) (or (B, d) for pooling)."""
    x = embed_lookup(params.embedding, batch.node_items)
    layer_trace = None if trace is None else trace.setdefault("wgat", [])
    for layer in params.wgat_layers:
        heads = None if layer_trace is None else []
        x = wgat_forward(layer, x, batch, trace=heads)
        if layer_trace is not None:
            layer_trace.append(heads)
    kind = params.config.readout
    if kind == "set2set":
        steps = None if trace is None else trace.setdefault("readout", [])
        return set2set_readout(params.readout, x, batch, trace=steps)
    if kind == "last_attention":
        return last_item_attention_readout(params.last_attention, x, batch.last_node, batch)
    return pool_readout(x, kind, batch)


def score_batch(params: ModelParams, batch: GraphBatch, trace: dict = None) -> Tensor:
    """Scores ẑ = (W_out q*)ᵀ X⁰ over the whole vocabulary, shape (B, m)."""
    q_star = graph_embedding(params, batch, trace)
    if q_star.shape[1] != params.w_out.shape[1]:
        raise DimensionError(f"graph embedding width {q_star.shape[1]} does not match "
                             f"w_out {params.w_out.shape}")
    return (q_star @ params.w_out.T) @ params.embedding.weights.T


def make_batch(params: ModelParams, sequences: Sequence[Sequence[int]]) -> GraphBatch:
    cfg = params.config
    m = params.n_items
    graphs = []
    for seq in sequences:
        for v in seq:
            if not 0 <= v < m:
                raise IndexError(f"item index {v} out of range for a vocabulary of {m}")
        graphs.append(build_graph(seq, selfloop_clamp=cfg.selfloop_clamp))
    return GraphBatch.from_graphs(graphs, edge_weight_norm=cfg.edge_weight_norm)


def forward(params: ModelParams, g: SessionGraph, k: int = 20) -> RankedResult:
    """Score one session graph against every item."""
    for v in g.node_items:
        if not 0 <= v < params.n_items:
            raise IndexError(f"item index {v} out of range for a vocabulary of {params.n_items}")
    batch = GraphBatch.from_graphs([g], edge_weight_norm=params.config.edge_weight_norm)
    z = score_batch(params, batch).data[0]
    result = RankedResult(z, ad.softmax(z))
    result.topk = predict_topk(result, min(k, len(z)))
    return result


def loss(scores, labels) -> Tensor:
    """Summed cross entropy −Σ log ŷ[label], computed by log-softmax on the raw scores."""
    return ad.cross_entropy(scores, labels)


def batch_loss(params: ModelParams, sequences, labels) -> Tensor:
    return loss(score_batch(params, make_batch(params, sequences)), labels)


def topk_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k columns per row, descending score, ties by ascending index."""
    scores = np.atleast_2d(scores)
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def predict_topk(result: RankedResult, k: int) -> list:
    m = len(result.probabilities)
    if not 1 <= k <= m:
        raise UsageError(f"K must lie in 1..{m}, got {k}")
    return [int(i) for i in topk_rows(result.probabilities, k)[0]]


def label_ranks(scores: np.ndarray, labels) -> np.ndarray:
    """1-based rank of each label under the descending-score, ascending-index order."""
    scores = np.atleast_2d(scores)
    labels = np.asarray(labels, np.intp)
    target = scores[np.arange(len(labels)), labels][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target) | ((scores == target) & (idx < labels[:, None]))
    return 1 + ahead.sum(axis=1)
