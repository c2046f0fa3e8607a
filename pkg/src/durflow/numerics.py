"""Reverse-mode autodiff on float64 numpy arrays.

The engine is deliberately small: a :class:`Tensor` wraps an ndarray, a
:class:`Tape` records one closure per primitive op while a ``record()``
context is active, and ``Tape.backward`` replays the closures in reverse.
Ops are coarse on purpose. ``conv1d`` and ``layer_norm`` are single tape
nodes with hand-written adjoints, so almost all time is spent inside
BLAS rather than in Python graph bookkeeping.

Conventions:

* every Tensor holds float64 data; integer inputs are converted,
* elementwise ops broadcast numpy-style (shapes aligned from the
  trailing axis) and the backward pass sums gradients over the
  broadcast axes,
* a tape can be consumed by ``backward`` exactly once,
* parameters are Tensors built with :func:`parameter`; they keep a
  persistent gradient buffer that starts at zero, so a parameter that
  never enters the graph simply keeps a zero gradient.
"""

from __future__ import annotations

import numpy as np


_active_tape = None


class Tensor:
    """An ndarray plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        """A view of the same data with no gradient tracking."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def parameter(data, rng=None, shape=None) -> Tensor:
    """Build a trainable Tensor with a persistent zero gradient buffer."""
    if data is None:
        data = np.zeros(shape, dtype=np.float64)
    t = Tensor(data, requires_grad=True)
    t.grad = np.zeros_like(t.data)
    return t


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self):
        self._nodes = []  # (out_tensor, backward_closure)
        self._spent = False

    def _push(self, out: Tensor, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every recorded tensor's .grad.

        ``loss`` must be a scalar. The tape is consumed: calling
        backward a second time raises RuntimeError.
        """
        if self._spent:
            raise RuntimeError("tape has already been consumed by backward()")
        if loss.data.ndim != 0:
            raise ValueError(
                f"backward expects a scalar loss, got shape {loss.data.shape}"
            )
        self._spent = True
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad = loss.grad + 1.0
        for out, backward_fn in reversed(self._nodes):
            if out.grad is not None:
                backward_fn(out.grad)
        self._nodes.clear()


class record:
    """Context manager that opens a fresh tape.

    Usage::

        with record() as tape:
            loss = ...
        tape.backward(loss)

    Nested recording is not supported; ops executed outside any
    ``record()`` block run forward-only and track nothing.
    """

    def __enter__(self) -> Tape:
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already recording; nesting is not supported")
        self.tape = Tape()
        _active_tape = self.tape
        return self.tape

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make_out(data, inputs) -> tuple[Tensor, bool]:
    """Create the op output; report whether the op must be taped."""
    tracked = _active_tape is not None and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    )
    out = Tensor(data, requires_grad=tracked)
    return out, tracked


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, tracked = _make_out(a.data + b.data, (a, b))
    if tracked:
        def backward_fn(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.data.shape))
        _active_tape._push(out, backward_fn)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, tracked = _make_out(a.data - b.data, (a, b))
    if tracked:
        def backward_fn(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(-g, b.data.shape))
        _active_tape._push(out, backward_fn)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, tracked = _make_out(a.data * b.data, (a, b))
    if tracked:
        ad, bd = a.data, b.data
        def backward_fn(g):
            if a.requires_grad:
                _accum(a, _unbroadcast(g * bd, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * ad, b.data.shape))
        _active_tape._push(out, backward_fn)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float; cheaper than mul with a constant."""
    c = float(c)
    out, tracked = _make_out(a.data * c, (a,))
    if tracked:
        def backward_fn(g):
            _accum(a, g * c)
        _active_tape._push(out, backward_fn)
    return out


def exp(a: Tensor) -> Tensor:
    out, tracked = _make_out(np.exp(a.data), (a,))
    if tracked:
        ed = out.data
        def backward_fn(g):
            _accum(a, g * ed)
        _active_tape._push(out, backward_fn)
    return out


def log(a: Tensor) -> Tensor:
    out, tracked = _make_out(np.log(a.data), (a,))
    if tracked:
        ad = a.data
        def backward_fn(g):
            _accum(a, g / ad)
        _active_tape._push(out, backward_fn)
    return out


def relu(a: Tensor) -> Tensor:
    out, tracked = _make_out(np.maximum(a.data, 0.0), (a,))
    if tracked:
        positive = a.data > 0.0
        def backward_fn(g):
            _accum(a, g * positive)
        _active_tape._push(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def tensor_sum(a: Tensor) -> Tensor:
    out, tracked = _make_out(a.data.sum(), (a,))
    if tracked:
        shape = a.data.shape
        def backward_fn(g):
            _accum(a, np.broadcast_to(g, shape))
        _active_tape._push(out, backward_fn)
    return out


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out, tracked = _make_out(a.data.mean(), (a,))
    if tracked:
        shape = a.data.shape
        def backward_fn(g):
            _accum(a, np.broadcast_to(g / n, shape))
        _active_tape._push(out, backward_fn)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out, tracked = _make_out(a.data.reshape(shape), (a,))
    if tracked:
        def backward_fn(g):
            _accum(a, g.reshape(old))
        _active_tape._push(out, backward_fn)
    return out


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out, tracked = _make_out(np.ascontiguousarray(a.data.transpose(axes)), (a,))
    if tracked:
        inverse = tuple(np.argsort(axes))
        def backward_fn(g):
            _accum(a, g.transpose(inverse))
        _active_tape._push(out, backward_fn)
    return out


def unsqueeze(a: Tensor, axis: int) -> Tensor:
    return reshape(a, a.data.shape[:axis] + (1,) + a.data.shape[axis:])


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out, tracked = _make_out(
        np.concatenate([t.data for t in tensors], axis=axis), tensors
    )
    if tracked:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward_fn(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    _accum(t, g[tuple(idx)])
        _active_tape._push(out, backward_fn)
    return out


def take_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]``; backward scatter-adds into the table."""
    idx = np.asarray(idx)
    out, tracked = _make_out(table.data[idx], (table,))
    if tracked:
        def backward_fn(g):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)
        _active_tape._push(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (m,k) @ (k,n)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    out, tracked = _make_out(a.data @ b.data, (a, b))
    if tracked:
        ad, bd = a.data, b.data
        def backward_fn(g):
            if a.requires_grad:
                _accum(a, g @ bd.T)
            if b.requires_grad:
                _accum(b, ad.T @ g)
        _active_tape._push(out, backward_fn)
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution over the time axis with same zero padding.

    Parameters
    ----------
    x : Tensor
        Input of shape (C_in, T) or (B, C_in, T).
    weight : Tensor
        Kernel of shape (C_out, C_in, k); k must be odd.
    bias : Tensor
        Shape (C_out,).

    The forward pass gathers sliding windows into a (C_in*k, B*T)
    matrix and performs one dgemm; the backward pass is two dgemms
    plus a window scatter. Output shape matches the input layout with
    C_in replaced by C_out.
    """
    c_out, c_in, k = weight.data.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {k}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != c_in:
        raise ValueError(
            f"conv1d channel mismatch: input has {xd.shape[1]}, weight wants {c_in}"
        )
    batch, _, t_len = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    # windows: (B, C_in, T, k) -> flat patches (C_in*k, B*T)
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    patches = np.ascontiguousarray(windows.transpose(1, 3, 0, 2)).reshape(
        c_in * k, batch * t_len
    )
    w2 = weight.data.reshape(c_out, c_in * k)
    out2 = w2 @ patches + bias.data[:, None]
    out_data = np.ascontiguousarray(
        out2.reshape(c_out, batch, t_len).transpose(1, 0, 2)
    )
    if squeeze:
        out_data = out_data[0]
    out, tracked = _make_out(out_data, (x, weight, bias))
    if tracked:
        def backward_fn(g):
            gd = g[None] if squeeze else g
            g2 = np.ascontiguousarray(gd.transpose(1, 0, 2)).reshape(
                c_out, batch * t_len
            )
            if weight.requires_grad:
                _accum(weight, (g2 @ patches.T).reshape(weight.data.shape))
            if bias.requires_grad:
                _accum(bias, g2.sum(axis=1))
            if x.requires_grad:
                gp = (w2.T @ g2).reshape(c_in, k, batch, t_len)
                gxp = np.zeros_like(xp)
                for j in range(k):
                    gxp[:, :, j : j + t_len] += gp[:, j].transpose(1, 0, 2)
                gx = gxp[:, :, pad : pad + t_len]
                _accum(x, gx[0] if squeeze else gx)
        _active_tape._push(out, backward_fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each time step across channels, then apply gain and bias.

    Input is (C, T) or (B, C, T); gain and bias are (C,). Uses the
    population variance (no Bessel correction).
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    c = xd.shape[1]
    mu = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out_data = gain.data[:, None] * xhat + bias.data[:, None]
    if squeeze:
        out_data = out_data[0]
    out, tracked = _make_out(out_data, (x, gain, bias))
    if tracked:
        def backward_fn(g):
            gd = g[None] if squeeze else g
            if gain.requires_grad:
                _accum(gain, (gd * xhat).sum(axis=(0, 2)))
            if bias.requires_grad:
                _accum(bias, gd.sum(axis=(0, 2)))
            if x.requires_grad:
                gxhat = gd * gain.data[:, None]
                term = (
                    c * gxhat
                    - gxhat.sum(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
                )
                gx = inv_std / c * term
                _accum(x, gx[0] if squeeze else gx)
        _active_tape._push(out, backward_fn)
    return out


# ---------------------------------------------------------------------------
# optimisation


def adam_step(theta, grad, m, v, step, lr=1e-3, beta1=0.9, beta2=0.98, eps=1e-9):
    """One Adam update, in place on ``theta``, ``m`` and ``v``.

    ``step`` is the 1-based update count used for bias correction.
    ``eps`` sits outside the square root.
    """
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("gradient contains non-finite values")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam with bias correction over named parameters.

    ``params`` is a dict mapping names to parameter Tensors. ``step()``
    consumes the accumulated gradients and resets them to zero. A
    non-finite gradient aborts with the offending parameter's name.
    """

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        # scratch buffers so each update runs without fresh allocations
        self._num = {k: np.empty_like(p.data) for k, p in self.params.items()}
        self._den = {k: np.empty_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(
                    f"non-finite gradient for parameter '{name}'"
                )
            # buffered but operation-for-operation identical to adam_step
            g, m, v = p.grad, self._m[name], self._v[name]
            num, den = self._num[name], self._den[name]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=num)
            m += num
            v *= self.beta2
            np.multiply(g, 1.0 - self.beta2, out=num)
            num *= g
            v += num
            np.divide(m, 1.0 - self.beta1**self.t, out=num)
            num *= self.lr
            np.divide(v, 1.0 - self.beta2**self.t, out=den)
            np.sqrt(den, out=den)
            den += self.eps
            num /= den
            p.data -= num
            g[...] = 0.0
