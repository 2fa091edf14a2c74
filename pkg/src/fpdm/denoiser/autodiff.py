"""A minimal reverse-mode tape over channel-last numpy arrays.

Every op computes its output immediately and records a closure that maps the
output cotangent to input cotangents. Parameters are views into one flat
vector, and their cotangents are accumulated into a matching flat buffer, so
the optimizer and the checkpoint both work on plain vectors.

Activations are laid out ``(N, H, W, C)`` so that a 3x3 convolution is a single
matrix product over an im2col buffer.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Node:
    __slots__ = ("value", "grad", "back")

    def __init__(self, value: np.ndarray, back: Callable[[np.ndarray], None] | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.back = back

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g


class Tape:
    """Records nodes in creation order; ``backward`` replays them in reverse."""

    def __init__(self, params: np.ndarray, grads: np.ndarray | None):
        self.params = params
        self.grads = grads  # None means inference: nothing is recorded
        self.nodes: list[Node] = []

    @property
    def recording(self) -> bool:
        return self.grads is not None

    def node(self, value, back=None) -> Node:
        n = Node(value, back if self.recording else None)
        if self.recording:
            self.nodes.append(n)
        return n

    def param(self, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray | None]:
        size = int(np.prod(shape))
        value = self.params[offset: offset + size].reshape(shape)
        grad = None if self.grads is None else self.grads[offset: offset + size].reshape(shape)
        return value, grad

    def backward(self, out: Node, seed: np.ndarray) -> None:
        out.grad = seed
        for n in reversed(self.nodes):
            if n.grad is not None and n.back is not None:
                n.back(n.grad)
            n.grad = None


def im2col3(x: np.ndarray) -> np.ndarray:
    """``(N, H, W, C)`` -> ``(N, H, W, 9C)`` with zero padding; taps ordered (dy, dx, c)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    n, h, w, c = x.shape
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n, h, w, 9 * c)


def flip_kernel(weight: np.ndarray, c_in: int, c_out: int) -> np.ndarray:
    """Weights of the adjoint convolution: taps reversed, channel roles swapped."""
    k = weight.reshape(3, 3, c_in, c_out)[::-1, ::-1]
    return np.ascontiguousarray(k.transpose(0, 1, 3, 2)).reshape(9 * c_out, c_in)


def conv3x3(tape: Tape, x: Node, w_off: int, b_off: int, c_in: int, c_out: int) -> Node:
    weight, g_weight = tape.param(w_off, (9 * c_in, c_out))
    bias, g_bias = tape.param(b_off, (c_out,))
    cols = im2col3(x.value)
    n, h, w, _ = cols.shape
    flat = cols.reshape(-1, 9 * c_in)
    out = (flat @ weight + bias).reshape(n, h, w, c_out)

    def back(g):
        gf = g.reshape(-1, c_out)
        g_weight[...] += flat.T @ gf
        g_bias[...] += gf.sum(axis=0)
        if x.back is not None:  # skip the input grid
            gx = im2col3(g).reshape(-1, 9 * c_out) @ flip_kernel(weight, c_in, c_out)
            x.accumulate(gx.reshape(n, h, w, c_in))

    return tape.node(out, back)


def linear(tape: Tape, x: Node, w_off: int, b_off: int, d_in: int, d_out: int) -> Node:
    weight, g_weight = tape.param(w_off, (d_in, d_out))
    bias, g_bias = tape.param(b_off, (d_out,))
    xv = x.value
    out = xv @ weight + bias

    def back(g):
        g_weight[...] += xv.T @ g
        g_bias[...] += g.sum(axis=0)
        x.accumulate(g @ weight.T)

    return tape.node(out, back)


def embedding(tape: Tape, index: np.ndarray, off: int, rows: int, dim: int) -> Node:
    table, g_table = tape.param(off, (rows, dim))
    index = np.asarray(index, dtype=np.intp)

    def back(g):
        np.add.at(g_table, index, g)

    return tape.node(table[index], back)


def silu(tape: Tape, x: Node) -> Node:
    xv = x.value
    sig = 1.0 / (1.0 + np.exp(-xv))
    out = xv * sig

    def back(g):
        x.accumulate(g * (sig * (1.0 + xv * (1.0 - sig))))

    return tape.node(out, back)


def add(tape: Tape, a: Node, b: Node) -> Node:
    def back(g):
        a.accumulate(g)
        b.accumulate(g)

    return tape.node(a.value + b.value, back)


def add_channel_bias(tape: Tape, x: Node, bias: Node) -> Node:
    """``x (N, H, W, C) + bias (N, C)`` broadcast over the grid."""

    def back(g):
        x.accumulate(g)
        bias.accumulate(g.sum(axis=(1, 2)))

    return tape.node(x.value + bias.value[:, None, None, :], back)


def avgpool2(tape: Tape, x: Node) -> Node:
    n, h, w, c = x.value.shape
    out = x.value.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def back(g):
        x.accumulate(np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    return tape.node(out, back)


def upsample2(tape: Tape, x: Node) -> Node:
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def back(g):
        n, h, w, c = g.shape
        x.accumulate(g.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)))

    return tape.node(out, back)


def concat_channels(tape: Tape, a: Node, b: Node) -> Node:
    ca = a.value.shape[-1]

    def back(g):
        a.accumulate(g[..., :ca])
        b.accumulate(g[..., ca:])

    return tape.node(np.concatenate([a.value, b.value], axis=-1), back)
