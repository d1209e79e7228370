"""Small reverse-mode autodiff over numpy arrays.

Only the primitives the GRU+attention translator needs are provided. Every
op records a closure on the output tensor; ``backward`` walks the graph in
reverse topological order.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        tape = _topo_order(self)
        self.grad = _accum(self.grad, grad)
        for node in reversed(tape):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topo_order(root):
    """Entries ordered so that every tensor's inputs come before it."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(existing, g):
    # never mutated in place, so sharing ``g`` is safe
    return g if existing is None else existing + g


def _send(t, g):
    if t.requires_grad:
        t.grad = _accum(t.grad, g)


def _result(data, parents, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


def _unbroadcast(g, shape):
    # bias-style broadcasting only: leading axes and size-1 axes are summed out
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    sa, sb = a.shape, b.shape
    if sa == sb or a.data.size == 1 or b.data.size == 1:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if tuple(long_[len(long_) - len(short):]) == tuple(short):
        return
    raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a, _dt(a, b)), as_tensor(b, _dt(a, b))
    _check_broadcast(a, b, "add")

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a, _dt(a, b)), as_tensor(b, _dt(a, b))
    _check_broadcast(a, b, "sub")

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a, _dt(a, b)), as_tensor(b, _dt(a, b))
    _check_broadcast(a, b, "mul")

    def backward(g):
        _send(a, _unbroadcast(g * b.data, a.shape))
        _send(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def _dt(a, b):
    for x in (a, b):
        if isinstance(x, Tensor):
            return x.dtype
    return np.float32


def _sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(x):
    s = _sigmoid(x.data)

    def backward(g):
        _send(x, g * s * (1.0 - s))

    return _result(s, (x,), backward)


def tanh(x):
    t = np.tanh(x.data)

    def backward(g):
        _send(x, g * (1.0 - t * t))

    return _result(t, (x,), backward)


def elementwise(op, *args):
    """Dispatch by name: sigmoid, tanh, add, mul, sub."""
    table = {"sigmoid": sigmoid, "tanh": tanh, "add": add, "mul": mul, "sub": sub}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product; a leading batch axis on ``a`` (and optionally ``b``) is allowed."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.data.ndim == 3 and (a.data.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: batch mismatch {a.shape} vs {b.shape}")
    flat = b.data.ndim == 2 and a.data.ndim > 2
    if flat:
        # one large GEMM instead of one per batch row
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _send(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _send(b, a2.T @ g2)
            return
        if a.requires_grad:
            _send(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _send(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(out, (a, b), backward)


def transpose_last(x):
    def backward(g):
        _send(x, np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(x.data, -1, -2), (x,), backward)


def concat(tensors, axis=-1):
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    sizes = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _send(t, piece)

    return _result(out, tensors, backward)


def reshape(x, shape):
    def backward(g):
        _send(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def slice_last(x, start, stop):
    """x[..., start:stop]."""
    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _send(x, full)

    return _result(x.data[..., start:stop], (x,), backward)


def select_time(x, t):
    """x[:, t] for a [batch, time, ...] tensor."""
    def backward(g):
        full = np.zeros_like(x.data)
        full[:, t] = g
        _send(x, full)

    return _result(x.data[:, t], (x,), backward)


def embedding(table, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _send(table, full)

    return _result(table.data[ids], (table,), backward)


# ---------------------------------------------------------------- softmax family

def softmax_np(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(x, mask):
    """Softmax over the last axis; positions where ``mask`` is False get weight 0.

    ``mask`` broadcasts against ``x`` and every row must keep at least one position.
    """
    mask = np.asarray(mask, dtype=bool)
    neg = np.finfo(x.dtype).min
    z = np.where(mask, x.data, neg)
    p = softmax_np(z) * mask

    def backward(g):
        _send(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _result(p.astype(x.dtype), (x,), backward)


def softmax_cross_entropy(logits, targets, ignore_index=None):
    """Mean NLL over rows of ``logits`` [N, V] whose target is not ``ignore_index``."""
    targets = np.asarray(targets).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs {targets.shape[0]} targets")
    keep = np.ones_like(targets, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ValueError("softmax_cross_entropy: every position is ignored, loss is empty")
    V = logits.shape[1]
    bad = keep & ((targets < 0) | (targets >= V))
    if bad.any():
        raise IndexError(f"softmax_cross_entropy: target id out of range for vocab {V}")
    rows = np.nonzero(keep)[0]
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(x - m).sum(axis=1, keepdims=True)) + m
    nll = logz[rows, 0] - x[rows, targets[rows]]
    loss = nll.sum() / count

    def backward(g):
        p = np.exp(x - logz)
        p[~keep] = 0.0
        p[rows, targets[rows]] -= 1.0
        _send(logits, (g / count) * p)

    return _result(np.asarray(loss, dtype=x.dtype), (logits,), backward)


def dropout(x, rate, rng, training):
    """Inverted dropout. Identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def backward(g):
        _send(x, g * keep)

    return _result(x.data * keep, (x,), backward)


# ---------------------------------------------------------------- GRU recurrence

def gru_step_np(xp, h, w_hh, b_hh):
    """One GRU update given the precomputed input projection ``xp`` [B, 3H].

    Returns the new state and the gates (r|z stacked, n, and the recurrent part of n).
    """
    H = h.shape[1]
    hp = h @ w_hh + b_hh
    rz = _sigmoid(xp[:, :2 * H] + hp[:, :2 * H])
    hn = hp[:, 2 * H:]
    n = np.tanh(xp[:, 2 * H:] + rz[:, :H] * hn)
    return n + rz[:, H:] * (h - n), (rz, n, hn)


def gru_cell(x, h, w_ih, b_ih, w_hh, b_hh):
    """One GRU step composed from the primitive ops (reference for ``gru_sequence``)."""
    H = h.shape[1]
    xp = add(matmul(x, w_ih), b_ih)
    hp = add(matmul(h, w_hh), b_hh)
    r = sigmoid(add(slice_last(xp, 0, H), slice_last(hp, 0, H)))
    z = sigmoid(add(slice_last(xp, H, 2 * H), slice_last(hp, H, 2 * H)))
    n = tanh(add(slice_last(xp, 2 * H, 3 * H), mul(r, slice_last(hp, 2 * H, 3 * H))))
    return add(n, mul(z, sub(h, n)))


def gru_sequence(xproj, h0, w_hh, b_hh, mask=None):
    """Run a GRU over time.

    xproj: [B, T, 3H] input projections (x @ W_ih + b_ih), gate order r, z, n.
    h0: [B, H]. mask: optional [B, T] of 0/1; where 0 the state is carried over.
    Returns hidden states [B, T, H]. Gate math follows the cuDNN/PyTorch GRU.
    """
    B, T, H3 = xproj.shape
    H = H3 // 3
    if h0.shape != (B, H) or w_hh.shape != (H, H3) or b_hh.shape != (H3,):
        raise ShapeError(
            f"gru_sequence: xproj {xproj.shape}, h0 {h0.shape}, w_hh {w_hh.shape}, b_hh {b_hh.shape}")
    dt = xproj.dtype
    m = None if mask is None else np.ascontiguousarray(np.asarray(mask, dtype=dt).T)[:, :, None]
    # time-major copies keep every per-step slice contiguous
    xp = np.ascontiguousarray(xproj.data.transpose(1, 0, 2))
    W, bias = w_hh.data, b_hh.data
    hs = np.empty((T + 1, B, H), dtype=dt)
    hs[0] = h0.data
    RZ = np.empty((T, B, 2 * H), dtype=dt)
    N = np.empty((T, B, H), dtype=dt)
    HN = np.empty((T, B, H), dtype=dt)
    for t in range(T):
        h = hs[t]
        hnew, (RZ[t], N[t], HN[t]) = gru_step_np(xp[t], h, W, bias)
        hs[t + 1] = hnew if m is None else h + m[t] * (hnew - h)

    def backward(g):
        g = g.transpose(1, 0, 2)
        dxp = np.empty_like(xp)
        dhp_all = np.empty_like(xp)
        dh = np.zeros((B, H), dtype=dt)
        WT = W.T
        for t in range(T - 1, -1, -1):
            dh = dh + g[t]
            rz, n, hn, prev = RZ[t], N[t], HN[t], hs[t]
            r, z = rz[:, :H], rz[:, H:]
            if m is None:
                dnew, dprev = dh, 0.0
            else:
                dnew = m[t] * dh
                dprev = dh - dnew
            dan = dnew * (1.0 - z) * (1.0 - n * n)
            dx = dxp[t]
            dx[:, :H] = dan * hn
            dx[:, H:2 * H] = dnew * (prev - n)
            dx[:, :2 * H] *= rz * (1.0 - rz)
            dx[:, 2 * H:] = dan
            dhp = dhp_all[t]
            dhp[:, :2 * H] = dx[:, :2 * H]
            dhp[:, 2 * H:] = dan * r
            dh = dprev + dnew * z + dhp @ WT
        _send(xproj, dxp.transpose(1, 0, 2))
        _send(h0, dh)
        if w_hh.requires_grad:
            _send(w_hh, hs[:-1].reshape(-1, H).T @ dhp_all.reshape(-1, H3))
        _send(b_hh, dhp_all.sum(axis=(0, 1)))

    return _result(hs[1:].transpose(1, 0, 2), (xproj, h0, w_hh, b_hh), backward)


# ---------------------------------------------------------------- optimisation

def clip_grad_norm(params, max_norm):
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return total


class Optimizer:
    """Adam (default) or plain SGD over a fixed list of named parameters."""

    def __init__(self, params, kind="adam", lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip=5.0):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = dict(params)
        self.kind, self.lr, self.betas, self.eps, self.clip = kind, lr, betas, eps, clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"parameter {name!r}: grad {p.grad.shape} vs value {p.data.shape}")
        if self.clip is not None:
            clip_grad_norm(self.params.values(), self.clip)
        self.t += 1
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad
            if self.kind == "sgd":
                p.data -= p.data.dtype.type(self.lr) * g
            else:
                m, v = self.m[name], self.v[name]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                mhat = m / (1 - b1 ** self.t)
                vhat = v / (1 - b2 ** self.t)
                p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def state_arrays(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def optimizer_step(params, config=None):
    """Functional wrapper: one update of ``params`` (name -> Tensor) using ``config`` kwargs.

    For stateful Adam across steps keep an ``Optimizer`` instance instead.
    """
    opt = Optimizer(params, **(config or {}))
    opt.step()
    return opt
