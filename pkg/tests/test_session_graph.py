from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgnn.exceptions import ContractError
from fgnn.session_graph import GraphBatch, build_graph, in_neighbors, to_dot

A, B, C = 0, 1, 2
sequences = st.lists(st.integers(0, 14), min_size=1, max_size=30)


def item_edges(g):
    return {(g.node_items[s], g.node_items[d]): w for s, d, w in g.edges}


def test_single_item_gets_only_a_self_loop():
    g = build_graph([A])
    assert g.node_items == (A,)
    assert item_edges(g) == {(A, A): 1}
    assert in_neighbors(g, 0) == [(0, 1)]


def test_repeated_bigrams_are_counted():
    g = build_graph([A, B, A, B])
    assert g.node_items == (A, B)
    assert item_edges(g) == {(A, B): 2, (B, A): 1, (A, A): 1, (B, B): 1}
    assert g.node_items[g.last_node] == B
    assert in_neighbors(g, 0) == [(1, 1), (0, 1)]


def test_consecutive_repeat_is_the_self_loop():
    g = build_graph([A, A, B])
    assert item_edges(g) == {(A, A): 1, (A, B): 1, (B, B): 1}
    g = build_graph([A, A, A, B])
    assert item_edges(g)[(A, A)] == 2


def test_selfloop_clamp_switch():
    g = build_graph([A, A, A, B], selfloop_clamp=True)
    assert item_edges(g)[(A, A)] == 1


def test_in_neighbors_of_two_item_session():
    assert in_neighbors(build_graph([A, B]), 1) == [(0, 1), (1, 1)]


def test_in_neighbors_range_check():
    with pytest.raises(IndexError):
        in_neighbors(build_graph([A, B]), 2)


def test_empty_sequence_rejected():
    with pytest.raises(ContractError):
        build_graph([])


def test_duplicates_change_weights_not_nodes():
    g1, g2 = build_graph([A, B]), build_graph([A, B, A, B])
    assert set(g1.node_items) == set(g2.node_items)
    assert item_edges(g1) != item_edges(g2)


@settings(max_examples=200, deadline=None)
@given(sequences)
def test_graph_properties(seq):
    g = build_graph(seq)
    assert len(set(g.node_items)) == len(g.node_items)
    for node in range(g.n_nodes):
        assert sum(1 for src, _ in in_neighbors(g, node) if src == node) == 1
    assert g.transition_weight() == len(seq) - 1
    assert sum(w for s, d, w in g.edges if s != d) == sum(1 for a, b in zip(seq, seq[1:]) if a != b)
    assert g.node_items[g.last_node] == seq[-1]
    assert build_graph(seq) == g


def test_dot_export():
    text = to_dot(build_graph([A, B, A]), item_keys=["apple", "pear"])
    assert text.startswith("digraph session {")
    assert 'label="apple"' in text and 'n0 -> n1 [label="1"]' in text


def test_relabel_moves_nodes_consistently():
    g = build_graph([A, B, C, B])
    h = g.relabel([2, 0, 1])
    assert h.node_items == (B, C, A)
    assert item_edges(h) == item_edges(g)
    assert h.node_items[h.last_node] == B


def test_batch_offsets_and_global_indices():
    g1, g2 = build_graph([A, B]), build_graph([C, A, C])
    batch = GraphBatch.from_graphs([g1, g2])
    assert batch.n_graphs == 2 and batch.n_nodes == 4
    np.testing.assert_array_equal(batch.node_graph, [0, 0, 1, 1])
    np.testing.assert_array_equal(batch.node_items, [A, B, C, A])
    np.testing.assert_array_equal(batch.last_node, [1, 2])
    assert set(zip(batch.src[g1.n_edges:], batch.dst[g1.n_edges:])) == {(2, 3), (3, 2), (2, 2), (3, 3)}


def test_out_degree_normalisation():
    batch = GraphBatch.from_graphs([build_graph([A, B, A, C])], edge_weight_norm="out-degree")
    out = Counter()
    for s, w in zip(batch.src, batch.weight):
        out[int(s)] += w
    assert all(v == pytest.approx(1.0) for v in out.values())
