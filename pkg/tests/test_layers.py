import numpy as np
import pytest

from fgnn import autodiff as ad
from fgnn.autodiff import Tensor
from fgnn.exceptions import DimensionError
from fgnn.layers import (
    EmbeddingTable,
    GRUCellParams,
    embed_lookup,
    gru_cell,
    init_gaussian,
    init_orthogonal,
)

from conftest import fd_check


def zero_cell(d_in, d_h):
    z = lambda *s: Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
    return GRUCellParams(z(3 * d_h, d_in), z(3 * d_h, d_h), z(3 * d_h), z(3 * d_h))


def test_embed_lookup_rows():
    table = EmbeddingTable(Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True))
    np.testing.assert_array_equal(embed_lookup(table, [0]).data, [[0.0, 1.0]])
    np.testing.assert_array_equal(embed_lookup(table, [2, 2]).data, [[4.0, 5.0], [4.0, 5.0]])


def test_embed_lookup_gradient_is_sparse():
    table = EmbeddingTable(Tensor(np.random.default_rng(0).normal(size=(5, 3)), requires_grad=True))
    embed_lookup(table, [2, 2]).sum().backward()
    expected = np.zeros((5, 3))
    expected[2] = 2.0
    np.testing.assert_array_equal(table.weights.grad, expected)
    numeric = ad.numerical_grad(lambda: embed_lookup(table, [2, 2]).sum().item(), table.weights)
    np.testing.assert_allclose(numeric, expected, atol=1e-8)


def test_embed_lookup_range():
    table = EmbeddingTable(Tensor(np.zeros((3, 2))))
    with pytest.raises(IndexError):
        embed_lookup(table, [3])


def test_gru_zero_everything_gives_zero():
    out = gru_cell(zero_cell(4, 3), Tensor(np.zeros(4)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, np.zeros(3))


def test_gru_closed_update_gate_carries_hidden():
    rng = np.random.default_rng(0)
    cell = GRUCellParams.init(4, 3, rng)
    cell.input_bias.data[3:6] = -50.0
    h = Tensor(rng.uniform(-1, 1, size=3))
    out = gru_cell(cell, Tensor(rng.uniform(-1, 1, size=4)), h)
    np.testing.assert_allclose(out.data, h.data, atol=1e-12)


def test_gru_matches_reference_equations():
    rng = np.random.default_rng(3)
    cell = GRUCellParams.init(4, 3, rng, std=0.5)
    x, h = rng.normal(size=4), rng.normal(size=3)
    W, U = cell.input_weights.data, cell.hidden_weights.data
    b = cell.input_bias.data + cell.hidden_bias.data
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    r = sig(W[0:3] @ x + U[0:3] @ h + b[0:3])
    z = sig(W[3:6] @ x + U[3:6] @ h + b[3:6])
    cand = np.tanh(W[6:9] @ x + U[6:9] @ (r * h) + b[6:9])
    expected = (1 - z) * h + z * cand
    np.testing.assert_allclose(gru_cell(cell, Tensor(x), Tensor(h)).data, expected, atol=1e-12)


def test_gru_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    cell = GRUCellParams.init(4, 3, rng, std=0.5)
    x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    h = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    tensors = list(cell.tensors().values()) + [x, h]
    assert fd_check(lambda: gru_cell(cell, x, h).sum(), tensors) <= 1e-4


def test_gru_dimension_error():
    cell = GRUCellParams.init(4, 3, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        gru_cell(cell, Tensor(np.zeros(5)), Tensor(np.zeros(3)))


def test_gru_output_bounded_from_zero_hidden():
    rng = np.random.default_rng(9)
    cell = GRUCellParams.init(6, 4, rng, std=2.0)
    h = Tensor(np.zeros((50, 4)))
    for _ in range(5):
        h = gru_cell(cell, Tensor(rng.normal(scale=5, size=(50, 6))), h)
        assert (np.abs(h.data) <= 1).all()


def test_init_gaussian_statistics_and_seed():
    t = init_gaussian((100, 100), np.random.default_rng(42))
    assert abs(t.data.mean()) <= 0.01
    assert abs(t.data.std() - 0.1) <= 0.01
    again = init_gaussian((100, 100), np.random.default_rng(42))
    assert np.array_equal(t.data, again.data)
    flat = init_gaussian((3, 3), np.random.default_rng(0), mean=0.7, std=0.0)
    assert (flat.data == 0.7).all()


@pytest.mark.parametrize("shape", [(4, 4), (2, 5), (5, 2), (1, 1)])
def test_init_orthogonal(shape):
    m = init_orthogonal(shape, np.random.default_rng(7)).data
    r, c = shape
    if r <= c:
        np.testing.assert_allclose(m @ m.T, np.eye(r), atol=1e-8)
    else:
        np.testing.assert_allclose(m.T @ m, np.eye(c), atol=1e-8)
    if r == c:
        assert abs(abs(np.linalg.det(m)) - 1.0) <= 1e-8


def test_gru_init_hidden_blocks_orthogonal():
    cell = GRUCellParams.init(8, 4, np.random.default_rng(0))
    for g in range(3):
        block = cell.hidden_weights.data[4 * g:4 * (g + 1)]
        np.testing.assert_allclose(block @ block.T, np.eye(4), atol=1e-8)
