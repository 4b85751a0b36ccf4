"""Deep Taylor decomposition and sensitivity analysis for :mod:`borderlrp.network` models.

Three redistribution rules are used when walking back from the explained
logit to the input:

* weighted layers above the input use the z+ rule (positive contributions
  ``a_i * max(w_ij, 0)``),
* pooling layers split relevance in proportion to the pooled activations,
* the first weighted layer uses the z^B rule with per-channel pixel bounds.

ReLU and Flatten pass relevance through unchanged. Biases never take part,
so relevance is only exactly conserved on bias-free networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import network as nw
from .network import Conv3D, Dense, Flatten, MaxPool3D, NetworkSpec, ReLU, SumPool3D
from .tensor import DTYPE, as_tensor, top_k_indices

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True)
class RelevanceConfig:
    epsilon: float = DEFAULT_EPSILON
    input_low: Union[float, Sequence[float]] = 0.0
    input_high: Union[float, Sequence[float]] = 1.0
    target: Optional[int] = None  # None explains the predicted class

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if np.any(np.asarray(self.input_low) > np.asarray(self.input_high)):
            raise ValueError("input_low must not exceed input_high")


@dataclass
class AttributionMap:
    scores: np.ndarray
    method: str  # "dtd" or "sensitivity"
    explained_class: int
    explained_value: float
    warning: Optional[str] = field(default=None)

    @property
    def total(self) -> float:
        return float(self.scores.sum())


def _positive_part(w):
    return np.maximum(w, 0.0)


def _negative_part(w):
    return np.minimum(w, 0.0)


def _linear(layer, weight, x):
    """Bias-free forward of a weighted layer on an unbatched input."""
    if isinstance(layer, Dense):
        return weight @ x
    return nw.conv3d(x[None], weight, layer.stride, layer.zero_padding)[0]


def _linear_adjoint(layer, weight, s, in_shape):
    if isinstance(layer, Dense):
        return weight.T @ s
    return nw.conv3d_transpose(s[None], weight, layer.stride, layer.zero_padding, in_shape[1:])[0]


def _check_weighted(layer, in_acts, rel_out, weight):
    if not isinstance(layer, (Conv3D, Dense)):
        raise ValueError(f"rule applies to Conv3D/Dense, not {type(layer).__name__}")
    if weight.shape != layer.weight_shape:
        raise ValueError(f"weight shape {weight.shape} != {layer.weight_shape}")
    out_shape = nw.layer_output_shape(layer, in_acts.shape)
    if rel_out.shape != out_shape:
        raise ValueError(f"relevance shape {rel_out.shape} != layer output {out_shape}")


def zplus_backward(layer, weight, in_acts, rel_out, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """R_i = sum_j a_i w+_ij / (sum_i' a_i' w+_i'j + eps) * R_j."""
    a = as_tensor(in_acts)
    r = as_tensor(rel_out)
    w = np.asarray(weight, dtype=DTYPE)
    _check_weighted(layer, a, r, w)
    if np.any(a < 0):
        raise ValueError("z+ rule needs non-negative input activations")
    wp = _positive_part(w)
    z = _linear(layer, wp, a)
    s = r / (z + epsilon)
    return a * _linear_adjoint(layer, wp, s, a.shape)


def zb_backward(
    layer, weight, x, low, high, rel_out, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """Box-constrained rule for the layer that sees raw pixels.

    ``low``/``high`` broadcast against ``x`` (scalars, per-channel vectors
    or full arrays). Zero padding counts as a constant with no relevance.
    """
    a = as_tensor(x)
    r = as_tensor(rel_out)
    w = np.asarray(weight, dtype=DTYPE)
    _check_weighted(layer, a, r, w)
    lo = _bounds(low, a.shape)
    hi = _bounds(high, a.shape)
    if np.any(a < lo) or np.any(a > hi):
        raise ValueError("input outside the [low, high] box")
    wp, wn = _positive_part(w), _negative_part(w)
    z = _linear(layer, w, a) - _linear(layer, wp, lo) - _linear(layer, wn, hi)
    s = r / (z + epsilon)
    return (
        a * _linear_adjoint(layer, w, s, a.shape)
        - lo * _linear_adjoint(layer, wp, s, a.shape)
        - hi * _linear_adjoint(layer, wn, s, a.shape)
    )


def _bounds(value, shape) -> np.ndarray:
    v = np.asarray(value, dtype=DTYPE)
    if v.ndim == 1 and len(shape) == 4:
        # one bound per channel
        if v.shape[0] != shape[0]:
            raise ValueError(f"{v.shape[0]} channel bounds for {shape[0]} channels")
        v = v.reshape(-1, 1, 1, 1)
    return np.broadcast_to(v, shape)


def pool_backward(layer, in_acts, rel_out, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """R_i = a_i / (sum of activations in the pool + eps) * R_j, summed over windows."""
    if not isinstance(layer, (MaxPool3D, SumPool3D)):
        raise ValueError(f"pool rule applies to pooling layers, not {type(layer).__name__}")
    a = as_tensor(in_acts)
    r = as_tensor(rel_out)
    out_shape = nw.layer_output_shape(layer, a.shape)
    if r.shape != out_shape:
        raise ValueError(f"relevance shape {r.shape} != pool output {out_shape}")
    if np.any(a < 0):
        raise ValueError("pool rule needs non-negative activations")
    z = nw.sum_pool(a[None], layer.window, layer.stride)[0]
    s = r / (z + epsilon)
    return a * nw.sum_pool_transpose(s[None], layer.window, layer.stride, (1, *a.shape))[0]


def _input_layer_index(net: NetworkSpec) -> int:
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Conv3D, Dense)):
            return i
        if not isinstance(layer, (Flatten, ReLU)):
            raise ValueError("only Flatten/ReLU may precede the first weighted layer")
    raise ValueError("network has no weighted layer")


def dtd_explain(net: NetworkSpec, trace: nw.ForwardTrace, config: RelevanceConfig = None) -> AttributionMap:
    """Deep Taylor relevance of the explained logit, one score per input element."""
    config = config or RelevanceConfig()
    if len(trace) != len(net.layers):
        raise ValueError("trace does not belong to this network")
    for i, shape in enumerate(net.shapes[1:]):
        if trace.outputs[i].shape != shape or trace.inputs[i].shape != net.shapes[i]:
            raise ValueError(f"trace activation shape mismatch at layer {i}")
    logits = trace.logits
    cls = top_k_indices(logits, 1)[0] if config.target is None else int(config.target)
    if not 0 <= cls < net.class_count:
        raise ValueError(f"class {cls} out of range")
    value = float(logits[cls])
    if not np.isfinite(value):
        raise ValueError("explained logit is not finite")
    warning = None
    if value <= 0:
        warning = f"explained logit {value!r} is not positive; relevance is degenerate"

    rel = np.zeros(net.class_count, dtype=DTYPE)
    rel[cls] = value
    first = _input_layer_index(net)
    x = trace.inputs[0]
    for i in range(len(net.layers) - 1, -1, -1):
        layer, a = net.layers[i], trace.inputs[i]
        if isinstance(layer, (Conv3D, Dense)):
            w = net.params[i].weight
            if i == first:
                shape = a.shape
                rel = zb_backward(
                    layer, w, a,
                    _bounds(config.input_low, x.shape).reshape(shape),
                    _bounds(config.input_high, x.shape).reshape(shape),
                    rel, config.epsilon,
                )
            else:
                rel = zplus_backward(layer, w, a, rel, config.epsilon)
        elif isinstance(layer, (MaxPool3D, SumPool3D)):
            rel = pool_backward(layer, a, rel, config.epsilon)
        elif isinstance(layer, Flatten):
            rel = rel.reshape(a.shape)
        elif isinstance(layer, ReLU):
            pass
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return AttributionMap(rel.reshape(x.shape), "dtd", cls, value, warning)


def sensitivity_explain(net: NetworkSpec, x, class_index: int) -> AttributionMap:
    """Squared input gradient of one logit; the scores sum to the squared gradient norm."""
    g = nw.gradient(net, x, class_index)
    scores = g * g
    return AttributionMap(scores, "sensitivity", int(class_index), float(scores.sum()))


def explain(net: NetworkSpec, x, method: str = "dtd", config: RelevanceConfig = None) -> AttributionMap:
    """Dispatch helper used by the sweeps and the CLI."""
    config = config or RelevanceConfig()
    trace = nw.forward(net, x)
    if method == "dtd":
        return dtd_explain(net, trace, config)
    if method == "sensitivity":
        cls = top_k_indices(trace.logits, 1)[0] if config.target is None else config.target
        return sensitivity_explain(net, x, cls)
    raise ValueError(f"unknown method {method!r}")
