"""Neural layers built on the autodiff primitives.

Layers hold their weights as leaf :class:`Tensor` attributes; a
:class:`Module` discovers them in attribute-definition order, which gives
every model a deterministic parameter order for checkpoints and optimizers.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    concat,
    dropout,
    layer_norm,
    matmul,
    relu,
    sigmoid,
    softmax,
    stack,
    tanh,
)


class ModelParams(Mapping):
    """Named, ordered collection of the learnable tensors of a model."""

    def __init__(self, items):
        self._items: dict[str, Tensor] = {}
        for name, tensor in items:
            if name in self._items:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._items[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def count(self) -> int:
        return sum(t.size for t in self._items.values())

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._items.values())

    def cast(self, dtype) -> None:
        for t in self._items.values():
            t.data = t.data.astype(dtype)
            t.grad = np.zeros_like(t.data)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._items.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self._items) ^ set(state)
        if missing:
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for name, t in self._items.items():
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ShapeError(f"parameter {name}: stored shape {value.shape} != model shape {t.shape}")
            t.data = value.astype(t.dtype, copy=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> ModelParams:
        return ModelParams(self.named_parameters())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float64) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.d_in, self.d_out = d_in, d_out
        self.weight = glorot(rng, d_in, d_out)
        self.bias = zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got input shape {x.shape}")
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  Gate columns are ordered ``[input, forget, output, candidate]``."""
    hidden = h.shape[-1]
    if w_h.shape != (hidden, 4 * hidden) or x.shape[-1] != w_x.shape[0]:
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h.shape}, w_x {w_x.shape}, w_h {w_h.shape} are inconsistent"
        )
    z = matmul(x, w_x) + matmul(h, w_h) + b
    return _lstm_gates(z, c, hidden)


def _lstm_gates(z: Tensor, c: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    gates = sigmoid(z[..., : 3 * hidden])
    i = gates[..., :hidden]
    f = gates[..., hidden : 2 * hidden]
    o = gates[..., 2 * hidden :]
    g = tanh(z[..., 3 * hidden :])
    c_next = f * c + i * g
    h_next = o * tanh(c_next)
    return h_next, c_next


class LSTMCell(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int):
        self.d_in, self.hidden = d_in, hidden
        self.w_x = glorot(rng, d_in, 4 * hidden)
        self.w_h = glorot(rng, hidden, 4 * hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_cell(x, h, c, self.w_x, self.w_h, self.b)


class LSTM(Module):
    """Stacked LSTM over axis -2 of a ``(..., T, d_in)`` input.

    Returns the top layer's hidden state at every step, shape ``(..., T, hidden)``.
    """

    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int, layers: int = 1):
        self.hidden = hidden
        self.cells = [LSTMCell(rng, d_in if i == 0 else hidden, hidden) for i in range(layers)]

    def __call__(self, x: Tensor) -> Tensor:
        for cell in self.cells:
            if x.shape[-1] != cell.d_in:
                raise ShapeError(f"LSTM expects input dim {cell.d_in}, got shape {x.shape}")
            # input projection for all steps at once; only the recurrent part is sequential
            xz = matmul(x, cell.w_x) + cell.b
            batch = x.shape[:-2]
            h = Tensor(np.zeros(batch + (self.hidden,), dtype=x.dtype))
            c = h
            outputs = []
            for t in range(x.shape[-2]):
                z = xz[..., t, :] + matmul(h, cell.w_h)
                h, c = _lstm_gates(z, c, self.hidden)
                outputs.append(h)
            x = stack(outputs, axis=-2)
        return x


class RNN(Module):
    """Elman recurrence ``h_t = tanh(x_t W_x + h_{t-1} W_h + b)`` over axis -2."""

    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int):
        self.d_in, self.hidden = d_in, hidden
        self.w_x = glorot(rng, d_in, hidden)
        self.w_h = glorot(rng, hidden, hidden)
        self.b = zeros(hidden)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"RNN expects input dim {self.d_in}, got shape {x.shape}")
        xz = matmul(x, self.w_x) + self.b
        h = Tensor(np.zeros(x.shape[:-2] + (self.hidden,), dtype=x.dtype))
        outputs = []
        for t in range(x.shape[-2]):
            h = tanh(xz[..., t, :] + matmul(h, self.w_h))
            outputs.append(h)
        return stack(outputs, axis=-2)


def gcn_layer(h: Tensor, adjacency, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Graph convolution ``ReLU(A_hat @ H @ W)`` on node axis -2."""
    a = adjacency if isinstance(adjacency, Tensor) else Tensor(np.asarray(adjacency, dtype=h.dtype))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"gcn_layer: adjacency must be square, got {a.shape}")
    if a.shape[0] != h.shape[-2] or h.shape[-1] != weight.shape[0]:
        raise ShapeError(f"gcn_layer: adjacency {a.shape}, features {h.shape}, weight {weight.shape} mismatch")
    out = matmul(a, matmul(h, weight))
    if bias is not None:
        out = out + bias
    return relu(out)


class GCNLayer(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.weight = glorot(rng, d_in, d_out)
        self.bias = zeros(d_out)

    def __call__(self, h: Tensor, adjacency) -> Tensor:
        return gcn_layer(h, adjacency, self.weight, self.bias)


class MultiHeadAttention(Module):
    """Scaled dot-product attention in ``n_heads`` subspaces.

    ``query`` is ``(B, Lq, d)`` and ``memory`` ``(B, Lk, d)``.  Calls return
    the projected output and the softmax weights ``(B, heads, Lq, Lk)`` as a
    plain array.
    """

    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int):
        if d_model % n_heads:
            raise ValueError(f"model dim {d_model} is not divisible by {n_heads} heads")
        self.d_model, self.n_heads = d_model, n_heads
        self.q = Linear(rng, d_model, d_model)
        # a key bias shifts every score of a query equally, so softmax ignores it
        self.k = Linear(rng, d_model, d_model, bias=False)
        self.v = Linear(rng, d_model, d_model)
        self.out = Linear(rng, d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.n_heads, self.d_model // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, query: Tensor, memory: Tensor) -> tuple[Tensor, np.ndarray]:
        if query.ndim != 3 or memory.ndim != 3 or query.shape[0] != memory.shape[0]:
            raise ShapeError(f"attention expects (B, L, d) inputs, got {query.shape} and {memory.shape}")
        d_head = self.d_model // self.n_heads
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d_head))
        weights = softmax(scores, axis=-1)
        mixed = matmul(weights, v).transpose(0, 2, 1, 3)
        b, lq = query.shape[0], query.shape[1]
        return self.out(mixed.reshape(b, lq, self.d_model)), weights.data


def positional_encoding(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding: even columns ``sin``, odd columns ``cos``."""
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = ones(d)
        self.beta = zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class TransformerEncoderBlock(Module):
    """Post-norm encoder block: attention and feed-forward, each with residual + layer norm."""

    def __init__(self, rng: np.random.Generator, d_model: int, n_heads: int, d_ff: int, dropout_p: float = 0.0):
        self.attn = MultiHeadAttention(rng, d_model, n_heads)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Linear(rng, d_model, d_ff)
        self.ff2 = Linear(rng, d_ff, d_model)
        self.norm2 = LayerNorm(d_model)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        attended, _ = self.attn(x, x)
        x = self.norm1(x + dropout(attended, self.dropout_p, rng))
        ff = self.ff2(relu(self.ff1(x)))
        return self.norm2(x + dropout(ff, self.dropout_p, rng))


class TransformerEncoder(Module):
    """Sinusoidal position encoding at entry followed by a stack of encoder blocks."""

    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int, n_layers: int, dropout_p: float = 0.0):
        self.d_model = d_model
        self.blocks = [TransformerEncoderBlock(rng, d_model, n_heads, d_ff, dropout_p) for _ in range(n_layers)]

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        x = x + positional_encoding(x.shape[-2], self.d_model, x.dtype)
        for block in self.blocks:
            x = block(x, rng)
        return x


class Conv1d(Module):
    """1-D convolution over axis -2 of a ``(B, T, C_in)`` input, output length T.

    ``causal`` pads only on the left so step ``t`` sees inputs ``<= t``;
    otherwise padding is split evenly ("same" convolution).
    """

    def __init__(self, rng, c_in: int, c_out: int, kernel: int = 3, dilation: int = 1, causal: bool = False):
        self.c_in, self.kernel, self.dilation, self.causal = c_in, kernel, dilation, causal
        self.weight = glorot(rng, kernel * c_in, c_out)
        self.bias = zeros(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.c_in:
            raise ShapeError(f"Conv1d expects (B, T, {self.c_in}), got {x.shape}")
        b, t, c = x.shape
        span = (self.kernel - 1) * self.dilation
        left = span if self.causal else span // 2
        right = span - left
        parts = []
        if left:
            parts.append(np.zeros((b, left, c), dtype=x.dtype))
        parts.append(x)
        if right:
            parts.append(np.zeros((b, right, c), dtype=x.dtype))
        padded = concat(parts, axis=1) if len(parts) > 1 else x
        taps = [padded[:, j * self.dilation : j * self.dilation + t, :] for j in range(self.kernel)]
        cols = concat(taps, axis=-1) if len(taps) > 1 else taps[0]
        return matmul(cols, self.weight) + self.bias
