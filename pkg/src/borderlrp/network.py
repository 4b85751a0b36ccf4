"""3D convolutional classifiers: architecture, forward pass and input gradients.

Internally every op works on a batch axis, ``(B, C, T, H, W)`` for volumes and
``(B, F)`` after flattening. The public ``forward``/``gradient``/``predict``
take a single unbatched sample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from .rng import STREAM_INIT, philox
from .tensor import DTYPE, as_tensor, frozen, top_k_indices

Triple = tuple[int, int, int]

# multiplies the He-uniform bound; small enough that training visibly moves the weights
DEFAULT_INIT_SCALE = 0.3


def _triple(v) -> Triple:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 extents, got {v!r}")
    return t


def _positive(name: str, values: Sequence[int]) -> None:
    if any(v < 1 for v in values):
        raise ValueError(f"{name} extents must be positive, got {tuple(values)}")


@dataclass(frozen=True)
class Conv3D:
    in_channels: int
    out_channels: int
    kernel: Triple = (3, 3, 3)
    stride: Triple = (1, 1, 1)
    zero_padding: Triple = (0, 0, 0)
    has_bias: bool = True

    def __post_init__(self):
        for name in ("kernel", "stride", "zero_padding"):
            object.__setattr__(self, name, _triple(getattr(self, name)))
        _positive("channel", (self.in_channels, self.out_channels))
        _positive("kernel", self.kernel)
        _positive("stride", self.stride)
        if any(p < 0 for p in self.zero_padding):
            raise ValueError("padding must be non-negative")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, *self.kernel)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool3D:
    window: Triple = (2, 2, 2)
    stride: Optional[Triple] = None  # defaults to the window

    def __post_init__(self):
        object.__setattr__(self, "window", _triple(self.window))
        object.__setattr__(
            self, "stride", self.window if self.stride is None else _triple(self.stride)
        )
        _positive("window", self.window)
        _positive("stride", self.stride)
        if any(s > w for s, w in zip(self.stride, self.window)):
            raise ValueError("pool stride larger than window would skip elements")


@dataclass(frozen=True)
class SumPool3D(MaxPool3D):
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    has_bias: bool = True

    def __post_init__(self):
        _positive("feature", (self.in_features, self.out_features))

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_features, self.in_features)


LayerSpec = Union[Conv3D, ReLU, MaxPool3D, SumPool3D, Flatten, Dense]
WEIGHTED = (Conv3D, Dense)
POOLS = (MaxPool3D, SumPool3D)


@dataclass(frozen=True, eq=False)
class Params:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None


def _extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def layer_output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, ReLU):
        return in_shape
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Dense):
        if in_shape != (layer.in_features,):
            raise ValueError(f"Dense expects ({layer.in_features},), got {in_shape}")
        return (layer.out_features,)
    if len(in_shape) != 4:
        raise ValueError(f"{type(layer).__name__} expects (C, T, H, W), got {in_shape}")
    c, *dims = in_shape
    if isinstance(layer, Conv3D):
        if c != layer.in_channels:
            raise ValueError(f"Conv3D expects {layer.in_channels} channels, got {c}")
        out = [
            _extent(n, k, s, p)
            for n, k, s, p in zip(dims, layer.kernel, layer.stride, layer.zero_padding)
        ]
        c = layer.out_channels
    else:
        out = [_extent(n, w, s, 0) for n, w, s in zip(dims, layer.window, layer.stride)]
    if any(e < 1 for e in out):
        raise ValueError(f"{type(layer).__name__} leaves no output for input {in_shape}")
    return (c, *out)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Layer stack plus parameters. ``params[i]`` is None for parameter-free layers."""

    input_shape: tuple[int, ...]
    layers: tuple
    params: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(x) for x in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.params) != len(self.layers):
            raise ValueError("need one params entry per layer")
        checked = []
        for layer, p in zip(self.layers, self.params):
            if not isinstance(layer, WEIGHTED):
                if p is not None:
                    raise ValueError(f"{type(layer).__name__} takes no parameters")
                checked.append(None)
                continue
            w = frozen(p.weight)
            if w.shape != layer.weight_shape:
                raise ValueError(f"weight shape {w.shape} != {layer.weight_shape}")
            b = None
            if layer.has_bias:
                if p.bias is None:
                    raise ValueError("layer declares a bias but none was given")
                b = frozen(p.bias)
                if b.shape != (layer.weight_shape[0],):
                    raise ValueError(f"bias shape {b.shape} invalid")
            checked.append(Params(w, b))
        object.__setattr__(self, "params", tuple(checked))
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ValueError("final layer must be Dense")
        if self.layers[-1].out_features != self.class_count:
            raise ValueError("final Dense width must equal class_count")
        self.shapes  # validates chaining

    @cached_property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        """Activation shapes: ``shapes[0]`` is the input, ``shapes[i+1]`` layer i's output."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer_output_shape(layer, out[-1]))
        return tuple(out)

    def with_params(self, params) -> "NetworkSpec":
        return NetworkSpec(self.input_shape, self.layers, tuple(params), self.class_count)


@dataclass
class ForwardTrace:
    inputs: list  # activation entering each layer
    outputs: list  # activation leaving each layer
    logits: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.outputs)


# ---------------------------------------------------------------------------
# batched primitives


def _offsets(window: Triple):
    return itertools.product(*(range(k) for k in window))


def _window_slice(offset, stride, out_dims):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_dims))


def _im2col(x: np.ndarray, kernel: Triple, stride: Triple, pad: Triple):
    """Patch matrix of shape ``(kt*kh*kw*C, B*T'*H'*W')`` and the output extents.

    Rows are ordered kernel-offset major, channel minor.
    """
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))
    out_dims = [_extent(n, k, s, p) for n, k, s, p in zip(x.shape[2:], kernel, stride, pad)]
    xc = xp.transpose(1, 0, 2, 3, 4)
    n_off = int(np.prod(kernel))
    cols = np.empty((n_off, x.shape[1], x.shape[0], *out_dims), dtype=DTYPE)
    for i, off in enumerate(_offsets(kernel)):
        cols[i] = xc[(slice(None), slice(None)) + _window_slice(off, stride, out_dims)]
    return cols.reshape(n_off * x.shape[1], -1), out_dims


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    # (O, C, kt, kh, kw) -> (O, kt*kh*kw*C), matching the _im2col row order
    return weight.transpose(0, 2, 3, 4, 1).reshape(weight.shape[0], -1)


def _channels_first(g: np.ndarray) -> np.ndarray:
    # (B, O, ...) -> (O, B*...)
    return g.transpose(1, 0, 2, 3, 4).reshape(g.shape[1], -1)


def conv3d(x: np.ndarray, weight: np.ndarray, stride: Triple, pad: Triple) -> np.ndarray:
    """Cross-correlation of a batch ``(B, C, T, H, W)`` with ``weight`` (O, C, kt, kh, kw)."""
    cols, out_dims = _im2col(x, weight.shape[2:], stride, pad)
    out = (_weight_matrix(weight) @ cols).reshape(weight.shape[0], x.shape[0], *out_dims)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))


def conv3d_transpose(
    g: np.ndarray, weight: np.ndarray, stride: Triple, pad: Triple, in_dims
) -> np.ndarray:
    """Adjoint of :func:`conv3d` with respect to its input."""
    kernel = weight.shape[2:]
    c = weight.shape[1]
    out_dims = g.shape[2:]
    dcols = (_weight_matrix(weight).T @ _channels_first(g)).reshape(-1, c, g.shape[0], *out_dims)
    padded = [n + 2 * p for n, p in zip(in_dims, pad)]
    dx = np.zeros((c, g.shape[0], *padded), dtype=DTYPE)
    for i, off in enumerate(_offsets(kernel)):
        dx[(slice(None), slice(None)) + _window_slice(off, stride, out_dims)] += dcols[i]
    crop = tuple(slice(p, p + n) for p, n in zip(pad, in_dims))
    dx = dx[(slice(None), slice(None)) + crop]
    return np.ascontiguousarray(dx.transpose(1, 0, 2, 3, 4))


def conv3d_weight_grad(
    x: np.ndarray, g: np.ndarray, kernel: Triple, stride: Triple, pad: Triple
) -> np.ndarray:
    cols, _ = _im2col(x, kernel, stride, pad)
    o, c = g.shape[1], x.shape[1]
    dw = (_channels_first(g) @ cols.T).reshape(o, *kernel, c)
    return np.ascontiguousarray(dw.transpose(0, 4, 1, 2, 3))


def _pool_dims(x_shape, window, stride):
    return [_extent(n, w, s, 0) for n, w, s in zip(x_shape[2:], window, stride)]


def sum_pool(x: np.ndarray, window: Triple, stride: Triple) -> np.ndarray:
    dims = _pool_dims(x.shape, window, stride)
    out = np.zeros((*x.shape[:2], *dims), dtype=DTYPE)
    for off in _offsets(window):
        out += x[(slice(None), slice(None)) + _window_slice(off, stride, dims)]
    return out


def sum_pool_transpose(g: np.ndarray, window: Triple, stride: Triple, in_shape) -> np.ndarray:
    dims = g.shape[2:]
    dx = np.zeros(in_shape, dtype=DTYPE)
    for off in _offsets(window):
        dx[(slice(None), slice(None)) + _window_slice(off, stride, dims)] += g
    return dx


def max_pool(x: np.ndarray, window: Triple, stride: Triple):
    """Window maxima plus the position of the first maximum in row-major scan order."""
    dims = _pool_dims(x.shape, window, stride)
    best = None
    arg = np.zeros((*x.shape[:2], *dims), dtype=np.int64)
    for i, off in enumerate(_offsets(window)):
        sl = x[(slice(None), slice(None)) + _window_slice(off, stride, dims)]
        if best is None:
            best = sl.copy()
            continue
        better = sl > best
        best[better] = sl[better]
        arg[better] = i
    return best, arg


def max_pool_transpose(g, arg, window: Triple, stride: Triple, in_shape) -> np.ndarray:
    dims = g.shape[2:]
    dx = np.zeros(in_shape, dtype=DTYPE)
    for i, off in enumerate(_offsets(window)):
        dx[(slice(None), slice(None)) + _window_slice(off, stride, dims)] += np.where(
            arg == i, g, 0.0
        )
    return dx


def _layer_forward(layer, p: Optional[Params], x: np.ndarray):
    """Returns (output, cache). The cache is only non-None for max pooling."""
    if isinstance(layer, Conv3D):
        y = conv3d(x, p.weight, layer.stride, layer.zero_padding)
        if p.bias is not None:
            y += p.bias.reshape(1, -1, 1, 1, 1)
        return y, None
    if isinstance(layer, Dense):
        y = x @ p.weight.T
        if p.bias is not None:
            y += p.bias
        return y, None
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0), None
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), None
    if isinstance(layer, SumPool3D):
        return sum_pool(x, layer.window, layer.stride), None
    if isinstance(layer, MaxPool3D):
        return max_pool(x, layer.window, layer.stride)
    raise TypeError(f"unknown layer {layer!r}")


def forward_batch(net: NetworkSpec, x: np.ndarray):
    """Activations ``acts`` (len = layers + 1) and per-layer max-pool caches."""
    acts = [x]
    caches = []
    for layer, p in zip(net.layers, net.params):
        y, cache = _layer_forward(layer, p, acts[-1])
        acts.append(y)
        caches.append(cache)
    return acts, caches


def backward_batch(net: NetworkSpec, acts, caches, grad_out: np.ndarray, param_grads=False):
    """Reverse-mode pass from ``grad_out`` (gradient w.r.t. logits).

    Returns the input gradient and, if requested, a list of per-layer
    ``(dweight, dbias)`` tuples (None for parameter-free layers).
    """
    g = grad_out
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, p, x = net.layers[i], net.params[i], acts[i]
        if isinstance(layer, Dense):
            if param_grads:
                grads[i] = (g.T @ x, g.sum(axis=0) if p.bias is not None else None)
            g = g @ p.weight
        elif isinstance(layer, Conv3D):
            if param_grads:
                dw = conv3d_weight_grad(x, g, layer.kernel, layer.stride, layer.zero_padding)
                db = g.sum(axis=(0, 2, 3, 4)) if p.bias is not None else None
                grads[i] = (dw, db)
            g = conv3d_transpose(g, p.weight, layer.stride, layer.zero_padding, x.shape[2:])
        elif isinstance(layer, ReLU):
            g = np.where(x > 0.0, g, 0.0)
        elif isinstance(layer, Flatten):
            g = g.reshape(x.shape)
        elif isinstance(layer, SumPool3D):
            g = sum_pool_transpose(g, layer.window, layer.stride, x.shape)
        elif isinstance(layer, MaxPool3D):
            g = max_pool_transpose(g, caches[i], layer.window, layer.stride, x.shape)
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return (g, grads) if param_grads else g


# ---------------------------------------------------------------------------
# single-sample API


def _check_input(net: NetworkSpec, x) -> np.ndarray:
    arr = as_tensor(x)
    if arr.shape != net.input_shape:
        raise ValueError(f"input shape {arr.shape} != network input {net.input_shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    return arr


def forward(net: NetworkSpec, x) -> ForwardTrace:
    arr = _check_input(net, x)
    acts, _ = forward_batch(net, arr[None])
    unbatched = [a[0] for a in acts]
    return ForwardTrace(inputs=unbatched[:-1], outputs=unbatched[1:], logits=unbatched[-1])


def gradient(net: NetworkSpec, x, class_index: int) -> np.ndarray:
    """d logit[class_index] / d input, same shape as the input."""
    arr = _check_input(net, x)
    if not 0 <= class_index < net.class_count:
        raise ValueError(f"class {class_index} out of range [0, {net.class_count})")
    acts, caches = forward_batch(net, arr[None])
    seed = np.zeros((1, net.class_count), dtype=DTYPE)
    seed[0, class_index] = 1.0
    return backward_batch(net, acts, caches, seed)[0]


def predict(net: NetworkSpec, x) -> tuple[np.ndarray, int]:
    logits = forward(net, x).logits
    return logits, top_k_indices(logits, 1)[0]


# ---------------------------------------------------------------------------
# construction


def initialize(layers, seed: int, scale: float = DEFAULT_INIT_SCALE) -> tuple:
    """He-uniform weights, zero biases, drawn from a pinned Philox stream."""
    gen = philox(seed, STREAM_INIT)
    params = []
    for layer in layers:
        if not isinstance(layer, WEIGHTED):
            params.append(None)
            continue
        shape = layer.weight_shape
        fan_in = int(np.prod(shape[1:]))
        bound = scale * np.sqrt(6.0 / fan_in)
        w = gen.uniform(-bound, bound, size=shape)
        b = np.zeros(shape[0]) if layer.has_bias else None
        params.append(Params(w, b))
    return tuple(params)


def mini_c3d_layers(
    class_count: int = 8, input_shape=(1, 16, 24, 24), bias: bool = True, hidden: int = 64
) -> list:
    c, t, h, w = input_shape
    layers = [
        Conv3D(c, 8, 3, 1, 1, has_bias=bias),
        ReLU(),
        MaxPool3D((1, 2, 2)),
        Conv3D(8, 16, 3, 1, 1, has_bias=bias),
        ReLU(),
        MaxPool3D((2, 2, 2)),
        Flatten(),
    ]
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer_output_shape(layer, shape)
    layers += [
        Dense(shape[0], hidden, has_bias=bias),
        ReLU(),
        Dense(hidden, class_count, has_bias=bias),
    ]
    return layers


def mini_c3d(
    class_count: int = 8,
    input_shape=(1, 16, 24, 24),
    bias: bool = True,
    seed: int = 0,
    scale: float = DEFAULT_INIT_SCALE,
) -> NetworkSpec:
    """Small C3D-like preset: two conv/ReLU/pool stages, the first pool leaving time alone."""
    layers = mini_c3d_layers(class_count, input_shape, bias)
    return NetworkSpec(tuple(input_shape), tuple(layers), initialize(layers, seed, scale), class_count)
