"""Minimal reverse-mode autodiff over dense numpy arrays.

Covers exactly the operations the wavelet network's forward pass needs:
elementwise arithmetic, ReLU/abs, reductions, reshape/concat/strided slicing,
the three convolution flavours, a fully-connected layer, row softmax,
cross-entropy, and a pairwise squared-distance op for the few-shot head.

A ``Tensor`` is a value plus an accumulated gradient plus a backward recipe
(parents + local-gradient closure).  Gradients accumulate with ``+=``; callers
are responsible for zeroing between steps.  Graph construction and
``backward()`` are single-threaded per training step; tensors whose graph is
no longer referenced are safe to share across threads read-only.

Set ``ALWNN_DEBUG=1`` (or toggle ``DEBUG_CHECK_FINITE``) to assert finiteness
after every op, which surfaces NaN/Inf divergence at its source.
"""

from __future__ import annotations

import os

import numpy as np

from .kernels import backend as _kb

DEBUG_CHECK_FINITE = os.environ.get("ALWNN_DEBUG", "") not in ("", "0")


class Tensor:
    """A numpy array with an accumulated gradient and a backward recipe."""

    __slots__ = ("data", "_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=None):
        if isinstance(data, np.ndarray):
            pass
        elif isinstance(data, np.generic):
            data = np.asarray(data)  # keep the dtype of reduction scalars
        else:
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self._grad = None
        self._parents = parents
        self._backward = backward
        self.name = name
        if DEBUG_CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {name or '<anon>'}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self):
        # Allocated lazily so inference-only graphs never pay for gradient buffers.
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        """Backpropagate from a scalar; grads of reachable tensors accumulate."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:  # iterative DFS: graphs for long frames exceed the recursion limit
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad[...] += 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node._grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name})"

    # Operator sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    if not isinstance(b, Tensor):  # scalar broadcast
        a = as_tensor(a)
        out = Tensor(a.data + float(b), (a,))

        def bwd(g):
            a.grad[...] += g

        out._backward = bwd
        return out
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        a.grad[...] += g
        b.grad[...] += g

    out._backward = bwd
    return out


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    if not isinstance(a, Tensor):
        return add(scale(b, -1.0), float(a))
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, (a, b))

    def bwd(g):
        a.grad[...] += g
        b.grad[...] -= g

    out._backward = bwd
    return out


def mul(a, b):
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    if not isinstance(a, Tensor):
        return scale(b, float(a))
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        a.grad[...] += g * b.data
        b.grad[...] += g * a.data

    out._backward = bwd
    return out


def scale(a, s: float):
    a = as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s, (a,))

    def bwd(g):
        a.grad[...] += g * s

    out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), (a,))

    def bwd(g):
        a.grad[...] += g * (a.data > 0)

    out._backward = bwd
    return out


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), (a,))

    def bwd(g):
        a.grad[...] += g * np.sign(a.data)

    out._backward = bwd
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, (a,))

    def bwd(g):
        a.grad[...] += g * (2.0 * a.data)

    out._backward = bwd
    return out


def sqrt_op(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Elementwise square root of non-negative input; grad floored near zero."""
    if np.any(a.data < 0):
        raise ValueError("sqrt_op requires non-negative input")
    root = np.sqrt(a.data)
    out = Tensor(root, (a,))

    def bwd(g):
        a.grad[...] += g * (0.5 / np.maximum(root, floor))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.array(a.data.sum(), dtype=a.dtype), (a,))

    def bwd(g):
        a.grad[...] += g

    out._backward = bwd
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.array(a.data.mean(), dtype=a.dtype), (a,))

    def bwd(g):
        a.grad[...] += g / n

    out._backward = bwd
    return out


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis), (a,))

    def bwd(g):
        a.grad[...] += np.expand_dims(g, axis) / n

    out._backward = bwd
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def bwd(g):
        a.grad[...] += g.reshape(a.data.shape)

    out._backward = bwd
    return out


def concat(tensors, axis: int) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty tensor list")
    tensors = tuple(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        idx = [slice(None)] * g.ndim
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx[axis] = slice(lo, hi)
            t.grad[...] += g[tuple(idx)]

    out._backward = bwd
    return out


def even_part(a: Tensor) -> Tensor:
    """Elements at even positions of the last axis (stride-2 slice)."""
    out = Tensor(np.ascontiguousarray(a.data[..., 0::2]), (a,))

    def bwd(g):
        a.grad[..., 0::2] += g

    out._backward = bwd
    return out


def odd_part(a: Tensor) -> Tensor:
    """Elements at odd positions of the last axis."""
    out = Tensor(np.ascontiguousarray(a.data[..., 1::2]), (a,))

    def bwd(g):
        a.grad[..., 1::2] += g

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# padding helpers (forward done here; conv kernels see the padded array)


def _pad_last(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    # hand-rolled: np.pad's generic machinery costs more than the copy itself
    if p == 0:
        return x
    L = x.shape[-1]
    out = np.empty(x.shape[:-1] + (L + 2 * p,), dtype=x.dtype)
    out[..., p:p + L] = x
    if mode == "zero":
        out[..., :p] = 0
        out[..., p + L:] = 0
    elif mode == "reflect":
        # Mirror without repeating the edge element: [a,b,c], p=1 -> [b,a,b,c,b].
        if L < p + 1:
            raise ValueError(f"reflect pad {p} undefined for length {L}")
        out[..., :p] = x[..., p:0:-1]
        out[..., p + L:] = x[..., L - 2:L - 2 - p:-1]
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    return out


def _unpad_grad_last(gp: np.ndarray, p: int, mode: str, length: int) -> np.ndarray:
    """Push a gradient on the padded axis back onto the unpadded one."""
    if p == 0:
        return gp
    g = gp[..., p:p + length].copy()
    if mode == "reflect":
        # Mirrored positions alias interior samples; fold their gradient back.
        for k in range(1, p + 1):
            g[..., k] += gp[..., p - k]
            g[..., length - 1 - k] += gp[..., p + length - 1 + k]
    return g


# ---------------------------------------------------------------------------
# convolutions


def conv1d_depthwise(x: Tensor, w: Tensor, bias: Tensor, pad: int, pad_mode: str = "zero") -> Tensor:
    """Per-channel correlation: x (N,C,L), w (C,K), bias (C) -> (N,C,L+2p-K+1)."""
    N, C, L = x.data.shape
    Cw, K = w.data.shape
    if Cw != C or bias.data.shape != (C,):
        raise ValueError(f"conv1d_depthwise: weight {w.data.shape}/bias {bias.data.shape} do not match C={C}")
    if K % 2 == 0:
        raise ValueError("conv1d_depthwise: kernel length must be odd")
    if L + 2 * pad < K:
        raise ValueError(f"conv1d_depthwise: length {L} too short for K={K}, pad={pad}")
    # _pad_last output is freshly contiguous; only the p=0 path needs the copy
    xp = _pad_last(x.data, pad, pad_mode) if pad else np.ascontiguousarray(x.data)
    y = _kb().dwconv1d_fwd(xp, w.data)
    y += bias.data[None, :, None]
    out = Tensor(y, (x, w, bias))

    def bwd(g):
        dxp, dw = _kb().dwconv1d_bwd(xp, w.data, np.ascontiguousarray(g))
        x.grad[...] += _unpad_grad_last(dxp, pad, pad_mode, L)
        w.grad[...] += dw
        bias.grad[...] += g.sum(axis=(0, 2))

    out._backward = bwd
    return out


def conv1d_pointwise(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-position channel mixing: x (N,Cin,L), w (Cout,Cin), bias (Cout)."""
    N, Cin, L = x.data.shape
    Cout, Cw = w.data.shape
    if Cw != Cin or bias.data.shape != (Cout,):
        raise ValueError(f"conv1d_pointwise: weight {w.data.shape}/bias {bias.data.shape} do not match Cin={Cin}")
    # (Cout,Cin) @ (N,Cin,L) batches over N; this is a plain BLAS matmul.
    y = np.matmul(w.data, x.data)
    y += bias.data[None, :, None]
    out = Tensor(y, (x, w, bias))

    def bwd(g):
        x.grad[...] += np.matmul(w.data.T, g)
        w.grad[...] += np.einsum("nol,ncl->oc", g, x.data, optimize=True)
        bias.grad[...] += g.sum(axis=(0, 2))

    out._backward = bwd
    return out


def conv2d_stem(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Full-height 2xK correlation over an (N,1,2,L) I/Q frame, width zero-pad (K-1)/2.

    Each output channel correlates one (2,K) kernel across both rows, so the
    I/Q axis collapses: output is (N,Cout,1,L).
    """
    if x.data.ndim != 4 or x.data.shape[1] != 1 or x.data.shape[2] != 2:
        raise ValueError(f"conv2d_stem: expected input (N,1,2,L), got {x.data.shape}")
    Cout, H, K = w.data.shape
    if H != 2 or bias.data.shape != (Cout,):
        raise ValueError(f"conv2d_stem: expected weight (C,2,K), got {w.data.shape}")
    N, _, _, L = x.data.shape
    pad = (K - 1) // 2
    x2 = np.ascontiguousarray(x.data.reshape(N, 2, L))
    xp = _pad_last(x2, pad, "zero")
    y = _kb().stemconv_fwd(xp, w.data)
    y += bias.data[None, :, None]
    out = Tensor(y.reshape(N, Cout, 1, L), (x, w, bias))

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(N, Cout, L))
        dxp, dw = _kb().stemconv_bwd(xp, w.data, g2)
        x.grad[...] += _unpad_grad_last(dxp, pad, "zero", L).reshape(x.data.shape)
        w.grad[...] += dw
        bias.grad[...] += g2.sum(axis=(0, 2))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# head ops


def fully_connected(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """x (N,D), w (K,D), bias (K) -> (N,K)."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"fully_connected: {x.data.shape} vs {w.data.shape}")
    out = Tensor(x.data @ w.data.T + bias.data[None, :], (x, w, bias))

    def bwd(g):
        x.grad[...] += g @ w.data
        w.grad[...] += g.T @ x.data
        bias.grad[...] += g.sum(axis=0)

    out._backward = bwd
    return out


def gap(x: Tensor) -> Tensor:
    """Global average pooling over the temporal axis: (N,C,T) -> (N,C)."""
    if x.data.ndim != 3:
        raise ValueError(f"gap: expected (N,C,T), got {x.data.shape}")
    return mean_axis(x, 2)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of an (N,K) tensor; rows sum to 1."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s, (x,))

    def bwd(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        x.grad[...] += s * (g - inner)

    out._backward = bwd
    return out


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class; labels in [0,K)."""
    labels = np.asarray(labels)
    N, K = probs.data.shape
    if labels.shape != (N,):
        raise ValueError(f"cross_entropy: labels shape {labels.shape} != ({N},)")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError("cross_entropy: label out of range")
    # Tiny floor keeps log finite if a probability underflows; inert otherwise.
    eps = 1e-12 if probs.dtype == np.float64 else 1e-30
    p = probs.data[np.arange(N), labels]
    out = Tensor(np.array(-np.mean(np.log(p + eps)), dtype=probs.dtype), (probs,))

    def bwd(g):
        gp = np.zeros_like(probs.data)
        gp[np.arange(N), labels] = -g / (N * (p + eps))
        probs.grad[...] += gp

    out._backward = bwd
    return out


def pairwise_sqdist(x: Tensor, p: Tensor) -> Tensor:
    """Squared Euclidean distances: x (Q,D), p (P,D) -> (Q,P)."""
    if x.data.shape[1] != p.data.shape[1]:
        raise ValueError(f"pairwise_sqdist: {x.data.shape} vs {p.data.shape}")
    diff = x.data[:, None, :] - p.data[None, :, :]
    out = Tensor(np.einsum("qpd,qpd->qp", diff, diff), (x, p))

    def bwd(g):
        gd = 2.0 * g[:, :, None] * diff
        x.grad[...] += gd.sum(axis=1)
        p.grad[...] -= gd.sum(axis=0)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    x = x.astype(np.float64, copy=True)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        fp = float(f(x))
        flat[i] = keep - step
        fm = float(f(x))
        flat[i] = keep
        gflat[i] = (fp - fm) / (2 * step)
    return g
