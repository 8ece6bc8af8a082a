"""Parameterised primitives: initialisers, embedding lookup and a GRU cell.

GRU gate blocks are stacked in the order (reset, update, candidate) along
the first axis of every weight and bias array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import DimensionError, UsageError

GATE_ORDER = ("reset", "update", "candidate")


def init_gaussian(shape, rng: np.random.Generator, mean: float = 0.0, std: float = 0.1,
                  name=None) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise UsageError(f"init_gaussian needs positive dimensions, got {shape}")
    return Tensor(rng.normal(mean, std, size=shape), requires_grad=True, name=name)


def orthogonal_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal rows (rows <= cols) or columns (cols < rows)."""
    if rows < 1 or cols < 1:
        raise UsageError(f"init_orthogonal needs positive dimensions, got {(rows, cols)}")
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # sign fix makes the draw uniform over the orthogonal group
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q.T if rows < cols else q


def init_orthogonal(shape, rng: np.random.Generator, name=None) -> Tensor:
    rows, cols = shape
    return Tensor(orthogonal_matrix(rows, cols, rng), requires_grad=True, name=name)


@dataclass
class EmbeddingTable:
    weights: Tensor

    @property
    def n_items(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def embed_lookup(table: EmbeddingTable, items) -> Tensor:
    return ad.gather_rows(table.weights, items)


@dataclass
class GRUCellParams:
    input_weights: Tensor
    hidden_weights: Tensor
    input_bias: Tensor
    hidden_bias: Tensor

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.hidden_weights.shape[1]

    def tensors(self) -> dict:
        return {
            "input_weights": self.input_weights,
            "hidden_weights": self.hidden_weights,
            "input_bias": self.input_bias,
            "hidden_bias": self.hidden_bias,
        }

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             std: float = 0.1, orthogonal_hidden: bool = True) -> "GRUCellParams":
        """Gaussian input weights and biases; one orthogonal square block per gate."""
        h = hidden_size
        if orthogonal_hidden:
            hidden = np.concatenate([orthogonal_matrix(h, h, rng) for _ in GATE_ORDER])
            hidden_weights = Tensor(hidden, requires_grad=True)
        else:
            hidden_weights = init_gaussian((3 * h, h), rng, std=std)
        return cls(
            input_weights=init_gaussian((3 * h, input_size), rng, std=std),
            hidden_weights=hidden_weights,
            input_bias=init_gaussian((3 * h,), rng, std=std),
            hidden_bias=init_gaussian((3 * h,), rng, std=std),
        )


def gru_cell(params: GRUCellParams, x, h) -> Tensor:
    """One GRU step on a row batch (``x``: B×d_in, ``h``: B×d_h); 1-D inputs are promoted.

    r = σ(W_r x + U_r h + b_r), z = σ(W_z x + U_z h + b_z),
    ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = (1 − z) ⊙ h + z ⊙ ĥ.
    """
    x, h = ad.as_tensor(x), ad.as_tensor(h)
    vector = x.ndim == 1
    if vector:
        x, h = x.reshape(1, -1), h.reshape(1, -1)
    d_in, d_h = params.input_size, params.hidden_size
    if x.ndim != 2 or x.shape[1] != d_in or h.ndim != 2 or h.shape[1] != d_h or x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_cell expects input (*, {d_in}) and hidden (*, {d_h}), "
                             f"got {x.shape} and {h.shape}")
    bias = params.input_bias + params.hidden_bias
    gx = x @ params.input_weights.T + bias
    u = params.hidden_weights
    gh = h @ u[: 2 * d_h].T
    r = ad.sigmoid(gx[:, :d_h] + gh[:, :d_h])
    z = ad.sigmoid(gx[:, d_h:2 * d_h] + gh[:, d_h:])
    cand = ad.tanh(gx[:, 2 * d_h:] + (r * h) @ u[2 * d_h:].T)
    out = h + z * (cand - h)
    return out.reshape(-1) if vector else out
