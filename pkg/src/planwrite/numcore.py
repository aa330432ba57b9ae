"""Small reverse-mode autodiff tape over numpy arrays.

A :class:`Graph` records every op it executes in an append-only list. Because
inputs always exist before the op that consumes them, walking the list
backwards is a valid reverse topological order and no sort is needed.

Leading axes are treated as batch axes; broadcasting is limited to what the
model needs (bias rows, per-example masks, shared weight matrices).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32
LOG_ZERO = -1e9


def set_float64(enabled: bool) -> None:
    """Switch every new tensor to 64-bit (used by gradient checks)."""
    global _DTYPE
    _DTYPE = np.float64 if enabled else np.float32


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def float64():
    previous = _DTYPE
    set_float64(True)
    try:
        yield
    finally:
        set_float64(previous == np.float64)


class Tensor:
    """Immutable value node. ``grad`` is filled in by :meth:`Graph.backward`."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.grad = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={self.requires_grad})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


class Graph:
    """Tape of executed ops.

    ``grad=False`` builds nothing (inference); ops still compute values.
    """

    def __init__(self, grad: bool = True):
        self.grad_enabled = grad
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    # -- leaves -------------------------------------------------------------

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=_DTYPE), requires_grad=self.grad_enabled, name=name)
        self.params[name] = t
        return t

    def const(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=_DTYPE))

    def detach(self, x: Tensor) -> Tensor:
        return Tensor(x.data)

    def _record(self, data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
        if not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced in forward pass")
        if not self.grad_enabled or not any(p.requires_grad for p in parents):
            return Tensor(data)
        out = Tensor(data, requires_grad=True)
        out.parents = parents
        out.backward_fn = fn
        self.nodes.append(out)
        return out

    # -- arithmetic ---------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        sa, sb = a.shape, b.shape
        return self._record(a.data + b.data, (a, b),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        sa, sb = a.shape, b.shape
        return self._record(a.data - b.data, (a, b),
                            lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        return self._record(ad * bd, (a, b),
                            lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))

    def scale(self, a: Tensor, factor: float) -> Tensor:
        return self._record(a.data * factor, (a,), lambda g: (g * factor,))

    def matmul(self, a: Tensor, b: Tensor, trans_b: bool = False) -> Tensor:
        """``a @ b`` (or ``a @ b.T``); ``b`` may be a shared 2-D weight."""
        ad, bd = a.data, b.data
        bm = _swap(bd) if trans_b else bd

        def back(g):
            ga = g @ _swap(bm)
            gb = _swap(ad) @ g
            if trans_b:
                gb = _swap(gb)
            return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

        return self._record(ad @ bm, (a, b), back)

    # -- nonlinearities -----------------------------------------------------

    def relu(self, x: Tensor) -> Tensor:
        pos = x.data > 0
        return self._record(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
        return self._record(y, (x,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        return self._record(y, (x,), lambda g: (g * (1.0 - y * y),))

    def log(self, x: Tensor) -> Tensor:
        """Natural log; non-positive inputs clamp to -1e9 with zero gradient."""
        pos = x.data > 0
        safe = np.where(pos, x.data, 1.0)
        out = np.where(pos, np.log(safe), LOG_ZERO).astype(x.data.dtype)
        return self._record(out, (x,), lambda g: (np.where(pos, g / safe, 0.0),))

    def logsumexp(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """``log sum exp`` over the last axis, restricted to ``mask``."""
        y = softmax_array(x.data, mask)
        xd = x.data if mask is None else np.where(np.broadcast_to(mask, x.shape), x.data, -np.inf)
        top = xd.max(axis=-1)
        out = top + np.log(np.exp(xd - top[..., None]).sum(axis=-1))
        return self._record(out.astype(x.data.dtype), (x,), lambda g: (g[..., None] * y,))

    def log_sigmoid(self, x: Tensor) -> Tensor:
        xd = x.data
        out = np.minimum(xd, 0) - np.log1p(np.exp(-np.abs(xd)))
        slope = 0.5 * (np.tanh(-0.5 * xd) + 1.0)  # sigmoid(-x)
        return self._record(out, (x,), lambda g: (g * slope,))

    def softmax(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Softmax over the last axis; masked-out (False) entries are exactly 0."""
        y = softmax_array(x.data, mask)

        def back(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

        return self._record(y, (x,), back)

    def dropout(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        """Apply a pre-drawn, pre-scaled keep mask; ``None`` means eval mode."""
        if mask is None:
            return x
        return self._record(x.data * mask, (x,), lambda g: (g * mask,))

    # -- shape / indexing ---------------------------------------------------

    def concat(self, xs: Sequence[Tensor], axis: int = -1) -> Tensor:
        sizes = [x.shape[axis] for x in xs]
        splits = np.cumsum(sizes)[:-1]
        return self._record(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                            lambda g: tuple(np.split(g, splits, axis=axis)))

    def stack(self, xs: Sequence[Tensor], axis: int = 1) -> Tensor:
        n = len(xs)
        return self._record(np.stack([x.data for x in xs], axis=axis), tuple(xs),
                            lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))

    def slice(self, x: Tensor, start: int, stop: int) -> Tensor:
        """Slice the last axis."""
        shape = x.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[..., start:stop] = g
            return (full,)

        return self._record(x.data[..., start:stop], (x,), back)

    def reshape(self, x: Tensor, shape: tuple[int, ...]) -> Tensor:
        old = x.shape
        return self._record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def sum(self, x: Tensor, axis: int | None = None) -> Tensor:
        shape = x.shape
        if axis is None:
            return self._record(np.asarray(x.data.sum()), (x,),
                                lambda g: (np.broadcast_to(g, shape).copy(),))
        ax = axis % len(shape)

        def back(g):
            return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

        return self._record(x.data.sum(axis=ax), (x,), back)

    def embedding(self, table: Tensor, ids: np.ndarray) -> Tensor:
        """Row lookup ``table[ids]`` for an integer array of any shape."""
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
        shape = table.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
            return (full,)

        return self._record(table.data[ids], (table,), back)

    def gather(self, x: Tensor, index: np.ndarray) -> Tensor:
        """Per-example pick along axis 1: ``out[b] = x[b, index[b]]``."""
        index = np.asarray(index)
        rows = np.arange(x.shape[0])
        shape = x.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, (rows, index), g)
            return (full,)

        return self._record(x.data[rows, index], (x,), back)

    def lstm_cell(self, x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        """Fused LSTM cell; returns ``[h_new, c_new]`` concatenated on the last axis."""
        n = h.shape[-1]
        xh = np.concatenate([x.data, h.data], axis=-1)
        z = xh @ weight.data.T + bias.data
        sig = 0.5 * (np.tanh(0.5 * z) + 1.0)
        i, f, o = sig[..., :n], sig[..., n:2 * n], sig[..., 3 * n:]
        cand = np.tanh(z[..., 2 * n:3 * n])
        c_new = f * c.data + i * cand
        tc = np.tanh(c_new)
        h_new = o * tc
        c_old, d_in = c.data, x.shape[-1]

        def back(grad):
            gh, gc = grad[..., :n], grad[..., n:]
            gc = gc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate([
                gc * cand * i * (1.0 - i),
                gc * c_old * f * (1.0 - f),
                gc * i * (1.0 - cand * cand),
                gh * tc * o * (1.0 - o),
            ], axis=-1)
            dxh = dz @ weight.data
            dw = dz.reshape(-1, 4 * n).T @ xh.reshape(-1, xh.shape[-1])
            return dxh[..., :d_in], dxh[..., d_in:], gc * f, dw, dz.reshape(-1, 4 * n).sum(axis=0)

        return self._record(np.concatenate([h_new, c_new], axis=-1), (x, h, c, weight, bias), back)

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Fill gradients; returns one array per registered parameter."""
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("loss is not finite")
        for node in self.nodes:
            node.grad = None
        for p in self.params.values():
            p.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }


def softmax_array(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("empty support")
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- recurrent cells ----------------------------------------------------------


class LstmState:
    """Hidden and cell vectors (rows are batch entries)."""

    __slots__ = ("hidden", "cell")

    def __init__(self, hidden: Tensor, cell: Tensor):
        if hidden.shape != cell.shape:
            raise ValueError(f"hidden {hidden.shape} and cell {cell.shape} widths differ")
        self.hidden = hidden
        self.cell = cell


def lstm_step(g: Graph, x: Tensor, state: LstmState, weight: Tensor, bias: Tensor) -> LstmState:
    """One LSTM cell step. ``weight`` is [4n, d_in + n], gate order i, f, g, o."""
    n = state.hidden.shape[-1]
    d_in = x.shape[-1]
    if weight.shape != (4 * n, d_in + n) or bias.shape != (4 * n,):
        raise ValueError(
            f"LSTM weight {weight.shape}/bias {bias.shape} do not fit input {d_in} and width {n}"
        )
    both = g.lstm_cell(x, state.hidden, state.cell, weight, bias)
    return LstmState(g.slice(both, 0, n), g.slice(both, n, 2 * n))


def carry(g: Graph, new: LstmState, old: LstmState, keep_new: Tensor) -> LstmState:
    """Select ``new`` where ``keep_new`` is 1 and ``old`` where 0 (padding steps)."""
    drop = g.const(1.0 - keep_new.data)
    return LstmState(
        g.add(g.mul(new.hidden, keep_new), g.mul(old.hidden, drop)),
        g.add(g.mul(new.cell, keep_new), g.mul(old.cell, drop)),
    )


def bilstm_encode(
    g: Graph,
    inputs: Tensor,
    lengths: np.ndarray,
    fwd: tuple[Tensor, Tensor],
    bwd: tuple[Tensor, Tensor],
    index: np.ndarray | None = None,
) -> tuple[Tensor, LstmState, LstmState]:
    """Bidirectional LSTM over padded sequences.

    ``inputs`` is [B, N, d]. Step k of example b reads ``inputs[b, index[b, k]]``
    (``index`` defaults to 0..N-1), which lets a content plan be encoded
    straight from the record vectors. Returns outputs [B, K, 2n] with the
    forward half first, plus the last forward and last backward states, each
    taken at the true end of its example's sequence.
    """
    lengths = np.asarray(lengths)
    batch = inputs.shape[0]
    if index is None:
        index = np.broadcast_to(np.arange(inputs.shape[1]), (batch, inputs.shape[1]))
    index = np.asarray(index)
    steps = index.shape[1]
    if steps == 0 or (lengths < 1).any():
        raise ValueError("bilstm_encode needs non-empty sequences")
    n = fwd[1].shape[0] // 4
    dtype = get_dtype()
    positions = np.arange(steps)
    live = positions[None, :] < lengths[:, None]
    valid = live.astype(dtype)
    # reversed step k reads original step len-1-k; padding maps to itself
    rev = np.where(live, lengths[:, None] - 1 - positions[None, :], positions[None, :])
    rev_index = np.take_along_axis(index, rev, axis=1)

    def run(weight, bias, order):
        zero = g.const(np.zeros((batch, n), dtype=dtype))
        state = LstmState(zero, zero)
        outs = []
        for k in range(steps):
            new = lstm_step(g, g.gather(inputs, order[:, k]), state, weight, bias)
            state = carry(g, new, state, g.const(valid[:, k:k + 1]))
            outs.append(state.hidden)
        return outs, state

    f_out, f_last = run(*fwd, index)
    b_out, b_last = run(*bwd, rev_index)
    b_stack = g.stack(b_out, axis=1)
    b_aligned = [g.gather(b_stack, rev[:, k]) for k in range(steps)]
    outputs = g.stack([g.concat([f, b]) for f, b in zip(f_out, b_aligned)], axis=1)
    return outputs, f_last, b_last


def init_uniform(rng: np.random.Generator, shape: Iterable[int], scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=tuple(shape)).astype(np.float64)
