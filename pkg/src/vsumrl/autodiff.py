"""Reverse-mode autodiff over small dense tensors.

Provides exactly the operations the score network and its training losses
need: 3D convolution, temporal transposed convolution, temporal max
pooling, spatial mean pooling, channel concatenation, pointwise
activations and a handful of scalar reductions. Values are float64
throughout; every differentiable operation can be verified against
central finite differences with :func:`grad_check`.

The tape is implicit: each :class:`Tensor` produced by an operation keeps
references to its parents and a closure that routes the output gradient
back to them. ``backward`` walks that DAG once in reverse topological
order, so gradient accumulation is deterministic.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DegenerateInputError, GraphError, ShapeMismatchError

_AXIS_NAMES = ("temporal", "channel", "width", "height")


def _triple(value, name: str) -> tuple[int, int, int]:
    if isinstance(value, (int, np.integer)):
        value = (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {value!r}")
    return value


class Tensor:
    """A dense float64 array plus its place on the backward tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward_fn=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 5:
            raise ShapeMismatchError(f"tensors are limited to 5 axes, got {arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Propagate from this scalar node to every reachable leaf."""
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"


def collect_gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward from ``loss`` and harvest one gradient per parameter.

    Parameters the loss does not reach receive zeros. Parameter ``grad``
    slots are cleared afterwards so the same leaves can be reused on the
    next tape.
    """
    loss.backward()
    grads = {}
    for name, tensor in params.items():
        if tensor.grad is None:
            grads[name] = np.zeros_like(tensor.data)
        else:
            grads[name] = tensor.grad.copy()
        tensor.grad = None
    return grads


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return Tensor(a.data + b.data, _parents=(a, b), _backward_fn=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return Tensor(a.data * b.data, _parents=(a, b), _backward_fn=backward)


def add_constant(x: Tensor, c) -> Tensor:
    """x + c for a scalar or same-shaped constant array (not differentiated)."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != x.data.shape:
        raise ShapeMismatchError(f"add_constant: constant shape {c.shape} vs {x.data.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g)

    return Tensor(x.data + c, _parents=(x,), _backward_fn=backward)


def scale(x: Tensor, c) -> Tensor:
    """x * c for a scalar or same-shaped constant array (not differentiated)."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != x.data.shape:
        raise ShapeMismatchError(f"scale: constant shape {c.shape} vs {x.data.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * c)

    return Tensor(x.data * c, _parents=(x,), _backward_fn=backward)


def absolute(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(g * np.sign(x.data))

    return Tensor(np.abs(x.data), _parents=(x,), _backward_fn=backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(g * 2.0 * x.data)

    return Tensor(x.data * x.data, _parents=(x,), _backward_fn=backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise ValueError("log requires strictly positive values")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g / x.data)

    return Tensor(np.log(x.data), _parents=(x,), _backward_fn=backward)


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0.0):
        raise ValueError("reciprocal of zero")

    def backward(g):
        if x.requires_grad:
            x.accumulate(-g / (x.data * x.data))

    return Tensor(1.0 / x.data, _parents=(x,), _backward_fn=backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(g)))

    return Tensor(x.data.sum(), _parents=(x,), _backward_fn=backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(g) / n))

    return Tensor(x.data.mean(), _parents=(x,), _backward_fn=backward)


# ---------------------------------------------------------------------------
# activations


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    # Split by sign so the exponential never overflows.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def relu(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (x.data > 0))

    return Tensor(np.maximum(x.data, 0.0), _parents=(x,), _backward_fn=backward)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_values(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * out * (1.0 - out))

    return Tensor(out, _parents=(x,), _backward_fn=backward)


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without saturating to -inf for finite x."""
    v = x.data
    out = -(np.log1p(np.exp(-np.abs(v))) + np.maximum(-v, 0.0))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * _sigmoid_values(-v))

    return Tensor(out, _parents=(x,), _backward_fn=backward)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# structural ops


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeMismatchError(f"reshape: cannot view {x.data.shape} as {shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.data.shape))

    return Tensor(x.data.reshape(shape), _parents=(x,), _backward_fn=backward)


def slice_range(x: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) of a 1-D tensor."""
    if x.data.ndim != 1:
        raise ShapeMismatchError(f"slice_range expects a 1-D tensor, got {x.data.ndim} axes")
    if start < 0 or length < 0 or start + length > x.data.shape[0]:
        raise ShapeMismatchError(
            f"slice_range: [{start}, {start + length}) outside length {x.data.shape[0]}")

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[start:start + length] = g
            x.accumulate(full)

    return Tensor(x.data[start:start + length].copy(), _parents=(x,), _backward_fn=backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [T, C, w, h] tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeMismatchError("concat_channels expects 4-axis tensors")
    for axis in (0, 2, 3):
        if a.data.shape[axis] != b.data.shape[axis]:
            raise ShapeMismatchError(
                f"concat_channels: {_AXIS_NAMES[axis]} axis differs "
                f"({a.data.shape[axis]} vs {b.data.shape[axis]})")
    ca = a.data.shape[1]

    def backward(g):
        if a.requires_grad:
            a.accumulate(g[:, :ca])
        if b.requires_grad:
            b.accumulate(g[:, ca:])

    return Tensor(np.concatenate([a.data, b.data], axis=1), _parents=(a, b), _backward_fn=backward)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias vector to a [T, C, w, h] tensor."""
    if x.data.ndim != 4:
        raise ShapeMismatchError("add_channel_bias expects a 4-axis tensor")
    if bias.data.ndim != 1 or bias.data.shape[0] != x.data.shape[1]:
        raise ShapeMismatchError(
            f"channel axis: bias has {bias.data.shape} entries, input has "
            f"{x.data.shape[1]} channels")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor(x.data + bias.data[None, :, None, None], _parents=(x, bias),
                  _backward_fn=backward)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv3d(x: Tensor, kernels: Tensor, stride=1, padding=0) -> Tensor:
    """3D convolution of a [T, C, w, h] input with [Co, Ci, kt, kw, kh] kernels.

    Zero padding; output extents follow the usual floor arithmetic. The
    kernel slides over the temporal and both spatial axes while summing
    over input channels.
    """
    st, sw, sh = _triple(stride, "stride")
    pt, pw, ph = _triple(padding, "padding")
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"conv3d input must have 4 axes, got {x.data.ndim}")
    if kernels.data.ndim != 5:
        raise ShapeMismatchError(f"conv3d kernels must have 5 axes, got {kernels.data.ndim}")
    if min(st, sw, sh) < 1 or min(pt, pw, ph) < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    T, C, W, H = x.data.shape
    co, ci, kt, kw, kh = kernels.data.shape
    if ci != C:
        raise ShapeMismatchError(
            f"channel axis: input has {C} channels, kernels expect {ci}")
    padded_extents = (T + 2 * pt, W + 2 * pw, H + 2 * ph)
    for axis_name, extent, avail in zip(("temporal", "width", "height"),
                                        (kt, kw, kh), padded_extents):
        if extent > avail:
            raise ShapeMismatchError(
                f"{axis_name} axis: kernel extent {extent} exceeds padded input {avail}")
    to = (padded_extents[0] - kt) // st + 1
    wo = (padded_extents[1] - kw) // sw + 1
    ho = (padded_extents[2] - kh) // sh + 1

    if pt or pw or ph:
        xp = np.zeros((T + 2 * pt, C, W + 2 * pw, H + 2 * ph))
        xp[pt:pt + T, :, pw:pw + W, ph:ph + H] = x.data
    else:
        xp = x.data
    out = np.zeros((to, co, wo, ho))
    taps = [(dt, dw, dh) for dt in range(kt) for dw in range(kw) for dh in range(kh)]

    def tap_slice(arr, dt, dw, dh):
        return arr[dt:dt + (to - 1) * st + 1:st, :,
                   dw:dw + (wo - 1) * sw + 1:sw,
                   dh:dh + (ho - 1) * sh + 1:sh]

    # taps whose padded slice is entirely zero contribute nothing forward
    # and have a zero kernel gradient; the input gradient still needs them
    live = [tap for tap in taps if tap_slice(xp, *tap).any()]
    for dt, dw, dh in live:
        out += np.einsum("tcwh,oc->towh", tap_slice(xp, dt, dw, dh),
                         kernels.data[:, :, dt, dw, dh])

    def backward(g):
        if kernels.requires_grad:
            gk = np.zeros_like(kernels.data)
            for dt, dw, dh in live:
                gk[:, :, dt, dw, dh] = np.einsum(
                    "towh,tcwh->oc", g, tap_slice(xp, dt, dw, dh))
            kernels.accumulate(gk)
        if x.requires_grad:
            gxp = np.zeros_like(xp) if xp is not x.data else np.zeros_like(x.data)
            for dt, dw, dh in taps:
                tap_slice(gxp, dt, dw, dh)[...] += np.einsum(
                    "towh,oc->tcwh", g, kernels.data[:, :, dt, dw, dh])
            x.accumulate(gxp[pt:pt + T, :, pw:pw + W, ph:ph + H])

    return Tensor(out, _parents=(x, kernels), _backward_fn=backward)


def conv_transpose(x: Tensor, kernels: Tensor, stride=1) -> Tensor:
    """Transposed convolution, the exact adjoint of zero-padding-free conv3d.

    Kernels use the same [Co, Ci, kt, kw, kh] layout as :func:`conv3d`; the
    input carries Co channels and the output Ci. Each kernel extent must
    equal the matching stride so the output has exactly ``stride`` times
    the input extent per axis (non-overlapping taps, no cropping).
    """
    st, sw, sh = _triple(stride, "stride")
    if min(st, sw, sh) < 1:
        raise ValueError("stride must be >= 1")
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"conv_transpose input must have 4 axes, got {x.data.ndim}")
    if kernels.data.ndim != 5:
        raise ShapeMismatchError(
            f"conv_transpose kernels must have 5 axes, got {kernels.data.ndim}")
    T, C, W, H = x.data.shape
    co, ci, kt, kw, kh = kernels.data.shape
    if co != C:
        raise ShapeMismatchError(
            f"channel axis: input has {C} channels, kernels expect {co}")
    if (kt, kw, kh) != (st, sw, sh):
        raise ShapeMismatchError(
            f"kernel extents {(kt, kw, kh)} must equal strides {(st, sw, sh)}")

    out = np.zeros((T * st, ci, W * sw, H * sh))
    taps = [(dt, dw, dh) for dt in range(kt) for dw in range(kw) for dh in range(kh)]
    for dt, dw, dh in taps:
        out[dt::st, :, dw::sw, dh::sh] = np.einsum(
            "towh,oc->tcwh", x.data, kernels.data[:, :, dt, dw, dh])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for dt, dw, dh in taps:
                gx += np.einsum("tcwh,oc->towh", g[dt::st, :, dw::sw, dh::sh],
                                kernels.data[:, :, dt, dw, dh])
            x.accumulate(gx)
        if kernels.requires_grad:
            gk = np.zeros_like(kernels.data)
            for dt, dw, dh in taps:
                gk[:, :, dt, dw, dh] = np.einsum(
                    "towh,tcwh->oc", x.data, g[dt::st, :, dw::sw, dh::sh])
            kernels.accumulate(gk)

    return Tensor(out, _parents=(x, kernels), _backward_fn=backward)


def temporal_max_pool(x: Tensor, window: int, stride: int) -> Tensor:
    """Max pool along the temporal axis of a [T, C, w, h] tensor.

    Ties route the gradient to the first maximal element of the window.
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"temporal_max_pool expects 4 axes, got {x.data.ndim}")
    window = int(window)
    stride = int(stride)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    T = x.data.shape[0]
    if T < window:
        raise DegenerateInputError(
            f"temporal length {T} is shorter than the pooling window {window}")
    to = (T - window) // stride + 1
    stacked = np.stack([x.data[i * stride:i * stride + window] for i in range(to)])
    arg = np.argmax(stacked, axis=1)  # first index wins ties
    out = np.take_along_axis(stacked, arg[:, None], axis=1)[:, 0]

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        t_out, c_idx, w_idx, h_idx = np.indices(out.shape)
        t_src = arg + t_out * stride
        np.add.at(gx, (t_src.ravel(), c_idx.ravel(), w_idx.ravel(), h_idx.ravel()), g.ravel())
        x.accumulate(gx)

    return Tensor(out, _parents=(x,), _backward_fn=backward)


def spatial_mean_pool(x: Tensor) -> Tensor:
    """Average over the two spatial axes: [T, C, w, h] -> [T, C]."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"spatial_mean_pool expects 4 axes, got {x.data.ndim}")
    _, _, w, h = x.data.shape
    denom = w * h

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.repeat(np.repeat(g[:, :, None, None], w, axis=2), h, axis=3) / denom)

    return Tensor(x.data.mean(axis=(2, 3)), _parents=(x,), _backward_fn=backward)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Compare analytic gradients of scalar ``f`` against central differences.

    Returns the maximum over coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.asarray(point, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GraphError("grad_check requires f to return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise NumericGradError("non-finite value at the expansion point", None)
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    worst = 0.0
    for idx in np.ndindex(base.shape):
        values = []
        for delta in (eps, -eps):
            shifted = base.copy()
            shifted[idx] += delta
            val = f(Tensor(shifted)).item()
            if not np.isfinite(val):
                raise NumericGradError(f"non-finite value while perturbing coordinate {idx}", idx)
            values.append(val)
        numeric = (values[0] - values[1]) / (2.0 * eps)
        err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
        worst = max(worst, err)
    return worst


class NumericGradError(ArithmeticError):
    """grad_check hit a non-finite intermediate; carries the coordinate index."""

    def __init__(self, message: str, coordinate):
        super().__init__(message)
        self.coordinate = coordinate
