"""Weighted directed session graphs and their batched (disjoint-union) form."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import ContractError, UsageError


@dataclass(frozen=True)
class SessionGraph:
    """Graph over the distinct items of one click sequence.

    ``edges`` holds ``(src, dst, weight)`` triples in node-position space:
    transition edges in order of first occurrence, then the weight-1
    self-loops added for nodes that had none (listed in ``added_loops``).
    """

    node_items: tuple
    edges: tuple
    in_adjacency: tuple
    last_node: int
    sequence_len: int
    added_loops: tuple = ()

    @property
    def n_nodes(self) -> int:
        return len(self.node_items)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def transition_weight(self) -> int:
        """Total weight of edges that come from consecutive pairs (n − 1 unclamped)."""
        added = set(self.added_loops)
        return sum(w for s, d, w in self.edges if not (s == d and s in added))

    def edge_arrays(self) -> tuple:
        """``(src, dst, weight)`` as numpy arrays."""
        if not self.edges:
            return (np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros(0))
        src, dst, w = zip(*self.edges)
        return np.array(src, np.intp), np.array(dst, np.intp), np.array(w, np.float64)

    def relabel(self, perm: Sequence[int]) -> "SessionGraph":
        """Same graph with node ``i`` moved to position ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n_nodes)):
            raise ContractError(f"relabel needs a permutation of 0..{self.n_nodes - 1}")
        items = [None] * self.n_nodes
        for old, new in enumerate(perm):
            items[new] = self.node_items[old]
        edges = tuple((perm[s], perm[d], w) for s, d, w in self.edges)
        added = tuple(perm[n] for n in self.added_loops)
        return _finish(tuple(items), edges, perm[self.last_node], self.sequence_len, added)


def build_graph(sequence: Sequence[int], selfloop_clamp: bool = False) -> SessionGraph:
    """Build the session graph of an item sequence.

    Each ordered consecutive pair becomes a directed edge weighted by how
    often that pair occurs. A node with no self-loop gets one of weight 1;
    a consecutive repeat ``(v, v)`` keeps its frequency as the loop weight,
    or weight 1 when ``selfloop_clamp`` is set.
    """
    seq = [int(v) for v in sequence]
    if not seq:
        raise ContractError("build_graph needs a non-empty sequence")
    position: dict = {}
    for v in seq:
        position.setdefault(v, len(position))
    pairs = Counter(zip(seq, seq[1:]))
    edges = []
    looped = set()
    for (a, b), w in pairs.items():
        s, d = position[a], position[b]
        if s == d:
            looped.add(s)
            if selfloop_clamp:
                w = 1
        edges.append((s, d, int(w)))
    added = tuple(node for node in range(len(position)) if node not in looped)
    edges.extend((node, node, 1) for node in added)
    return _finish(tuple(position), tuple(edges), position[seq[-1]], len(seq), added)


def _finish(node_items: tuple, edges: tuple, last_node: int, n: int, added: tuple) -> SessionGraph:
    incoming = [[] for _ in node_items]
    for s, d, w in edges:
        incoming[d].append((s, w))
    adjacency = tuple(tuple(lst) for lst in incoming)
    return SessionGraph(node_items, edges, adjacency, last_node, n, added)


def in_neighbors(g: SessionGraph, node: int) -> list:
    """Sources of edges ending at ``node`` with their weights (self-loop included)."""
    if not 0 <= node < g.n_nodes:
        raise IndexError(f"node {node} out of range for a graph with {g.n_nodes} nodes")
    return list(g.in_adjacency[node])


def to_dot(g: SessionGraph, item_keys: Optional[Sequence[str]] = None, name: str = "session") -> str:
    """Graphviz DOT text, nodes labelled by item key and edges by weight."""

    def label(item):
        key = item_keys[item] if item_keys is not None else str(item)
        return str(key).replace('"', '\\"')

    lines = [f"digraph {name} {{"]
    for pos, item in enumerate(g.node_items):
        shape = ' shape="doublecircle"' if pos == g.last_node else ""
        lines.append(f'  n{pos} [label="{label(item)}"{shape}];')
    for s, d, w in g.edges:
        lines.append(f'  n{s} -> n{d} [label="{w}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class GraphBatch:
    """Disjoint union of session graphs, indexed globally.

    Node rows of graph ``b`` occupy ``offsets[b]:offsets[b + 1]``.
    """

    node_items: np.ndarray
    node_graph: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    last_node: np.ndarray
    offsets: np.ndarray
    sequence_len: np.ndarray

    @property
    def n_graphs(self) -> int:
        return len(self.last_node)

    @property
    def n_nodes(self) -> int:
        return len(self.node_items)

    @classmethod
    def from_graphs(cls, graphs: Sequence[SessionGraph], edge_weight_norm: str = "none") -> "GraphBatch":
        if not graphs:
            raise ContractError("cannot batch an empty list of graphs")
        if edge_weight_norm not in ("none", "out-degree"):
            raise UsageError(f"unknown edge_weight_norm {edge_weight_norm!r}")
        items, owner, src, dst, wts, last, offsets = [], [], [], [], [], [], [0]
        for b, g in enumerate(graphs):
            base = offsets[-1]
            items.extend(g.node_items)
            owner.extend([b] * g.n_nodes)
            s, d, w = g.edge_arrays()
            if edge_weight_norm == "out-degree":
                out_deg = np.bincount(s, weights=w, minlength=g.n_nodes)
                w = w / out_deg[s]
            src.append(s + base)
            dst.append(d + base)
            wts.append(w)
            last.append(base + g.last_node)
            offsets.append(base + g.n_nodes)
        return cls(
            node_items=np.array(items, np.intp),
            node_graph=np.array(owner, np.intp),
            src=np.concatenate(src),
            dst=np.concatenate(dst),
            weight=np.concatenate(wts).astype(np.float64),
            last_node=np.array(last, np.intp),
            offsets=np.array(offsets, np.intp),
            sequence_len=np.array([g.sequence_len for g in graphs], np.intp),
        )
