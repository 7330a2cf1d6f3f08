"""Neural network building blocks: embeddings, LSTMs, linear maps, dropout.

All parameters live in small dataclasses of leaf tensors so that model
code can enumerate, initialize and update them by name.  Initialization
draws from a caller-provided ``numpy.random.Generator``; the draw order
is fixed by the field order documented on each ``init``, which is what
makes same-seed runs bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for a matrix
    mapping fan_in inputs to fan_out outputs (shape is (fan_out, fan_in))."""
    fan_out, fan_in = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


@dataclass
class EmbeddingTable:
    """Token embedding matrix, one row per vocabulary id.

    Row 0 belongs to the padding token and is kept at zero: sequences are
    processed one at a time so id 0 is never looked up, but the row is
    part of the parameter manifest and must stay stable across save/load.
    """

    weights: Tensor  # (vocab, dim)

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        w = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
        w[0] = 0.0
        return cls(Tensor(w, requires_grad=True))

    def lookup(self, ids) -> Tensor:
        """Gather embeddings for a token id sequence, shape (T, dim)."""
        return ad.rows(self.weights, ids)


@dataclass
class LstmParams:
    """One direction of an LSTM.

    Gate blocks are stacked along the first axis in the order input,
    forget, cell, output; the forget-gate bias section starts at 1.0 so
    early training does not erase the cell state.
    """

    w: Tensor  # (4d, input_dim)
    u: Tensor  # (4d, d)
    b: Tensor  # (4d,)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        """Draw order: w, then u. Biases start at zero except forget = 1."""
        w = xavier_uniform((4 * hidden_dim, input_dim), rng)
        u = xavier_uniform((4 * hidden_dim, hidden_dim), rng)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = 1.0
        return cls(
            Tensor(w, requires_grad=True),
            Tensor(u, requires_grad=True),
            Tensor(b, requires_grad=True),
        )

    @property
    def hidden_dim(self) -> int:
        return self.u.data.shape[1]


def lstm_step(p: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; returns (h_t, c_t)."""
    d = p.hidden_dim
    z = ad.add(ad.add(ad.matvec(p.w, x_t), ad.matvec(p.u, h_prev)), p.b)
    i = ad.sigmoid(ad.slice1d(z, 0, d))
    f = ad.sigmoid(ad.slice1d(z, d, 2 * d))
    g = ad.tanh(ad.slice1d(z, 2 * d, 3 * d))
    o = ad.sigmoid(ad.slice1d(z, 3 * d, 4 * d))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


def lstm_run(p: LstmParams, inputs: Tensor, reverse: bool = False) -> list[Tensor]:
    """Run one direction over a (T, input_dim) matrix from zero initial
    state.  Returns hidden vectors in input order regardless of direction."""
    t_len = inputs.data.shape[0]
    h = Tensor(np.zeros(p.hidden_dim))
    c = Tensor(np.zeros(p.hidden_dim))
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    out: list[Tensor | None] = [None] * t_len
    for t in steps:
        h, c = lstm_step(p, ad.row(inputs, t), h, c)
        out[t] = h
    return out  # type: ignore[return-value]


def bilstm(fwd: LstmParams, bwd: LstmParams, inputs: Tensor) -> Tensor:
    """Bidirectional encoding of a (T, input_dim) matrix into (T, 2d):
    forward and backward hidden states concatenated per position."""
    forward = lstm_run(fwd, inputs)
    backward = lstm_run(bwd, inputs, reverse=True)
    return ad.stack_rows([ad.concat(f, b) for f, b in zip(forward, backward)])


@dataclass
class Linear:
    w: Tensor  # (out, in)
    b: Tensor  # (out,)

    @classmethod
    def init(cls, input_dim: int, output_dim: int, rng: np.random.Generator) -> "Linear":
        """Draw order: w only; bias starts at zero."""
        w = xavier_uniform((output_dim, input_dim), rng)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(output_dim), requires_grad=True))


def linear_vec(p: Linear, x: Tensor) -> Tensor:
    return ad.add(ad.matvec(p.w, x), p.b)


def linear_rows(p: Linear, x: Tensor) -> Tensor:
    """Apply the same affine map to every row of a (T, in) matrix."""
    return ad.add_rowvec(ad.matmul(x, ad.transpose(p.w)), p.b)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: zero entries with probability p and scale the
    survivors by 1/(1-p), so evaluation needs no rescaling.  Identity when
    not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, Tensor(mask))
