"""Sequential model graph, forward/backward passes and reference networks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layers as L
from .layers import (
    PARAMETRIC,
    Activation,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    Dropout,
    Flatten,
    LayerSpec,
    Pool,
    Softmax,
)

INPUT_POINT = -1
SUPPORTED_INPUT_SIZES = (32, 96)


@dataclass
class ModelGraph:
    """Ordered layer specs plus their parameters.

    ``params`` is a flat list ordered by layer, weight before bias; a
    tensor's position in it is its id everywhere else (container records,
    masks, quantization specs).
    """

    layers: List[LayerSpec]
    params: List[np.ndarray]
    input_size: int
    class_count: int
    in_channels: int = 1
    name: str = ""
    _slots: Dict[int, Tuple[int, int]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self._slots = param_slots(self.layers)
        expected = [s for layer in self.layers for s in layer.param_shapes()]
        if [tuple(p.shape) for p in self.params] != [tuple(s) for s in expected]:
            raise ValueError("parameter shapes do not match layer specs")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ValueError("Softmax may only be the final layer")
            shape = layer.output_shape(shape)
        if shape != (self.class_count,):
            raise ValueError(f"model output {shape} != ({self.class_count},)")

    @property
    def input_shape(self):
        return (self.input_size, self.input_size, self.in_channels)

    def slot(self, layer_index: int) -> Tuple[int, int]:
        """(weight id, bias id) of a parametric layer."""
        return self._slots[layer_index]

    def weight_ids(self) -> List[int]:
        return [w for w, _ in self._slots.values()]

    def bias_ids(self) -> List[int]:
        return [b for _, b in self._slots.values()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "ModelGraph":
        return ModelGraph(list(self.layers), [p.copy() for p in self.params],
                          self.input_size, self.class_count, self.in_channels, self.name)

    def astype(self, dtype) -> "ModelGraph":
        g = self.copy()
        g.params = [p.astype(dtype) for p in g.params]
        return g

    def with_dropout(self, rate: float) -> "ModelGraph":
        g = self.copy()
        g.layers = [Dropout(rate) if isinstance(l, Dropout) else l for l in g.layers]
        return g


def param_slots(layers: Sequence[LayerSpec]) -> Dict[int, Tuple[int, int]]:
    slots, pid = {}, 0
    for i, layer in enumerate(layers):
        if isinstance(layer, PARAMETRIC):
            slots[i] = (pid, pid + 1)
            pid += 2
    return slots


def activation_points(layers: Sequence[LayerSpec]) -> List[int]:
    """Indices of layers whose outputs the integer runtime materializes.

    Always begins with ``INPUT_POINT``.  Linear layers followed by an
    activation are fused with it, so only the post-activation tensor is a
    point; max pooling, flatten and dropout reuse their input's params.
    """
    points = [INPUT_POINT]
    for i, layer in enumerate(layers):
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if isinstance(layer, Activation):
            points.append(i)
        elif isinstance(layer, PARAMETRIC) and not isinstance(nxt, Activation):
            points.append(i)
        elif isinstance(layer, Pool) and layer.kind == "global_avg":
            points.append(i)
    return points


def expected_param_count(layers: Sequence[LayerSpec]) -> int:
    total = 0
    for layer in layers:
        if isinstance(layer, Conv2D):
            total += layer.kh * layer.kw * layer.cin * layer.cout + layer.cout
        elif isinstance(layer, DepthwiseConv2D):
            total += layer.kh * layer.kw * layer.channels + layer.channels
        elif isinstance(layer, Dense):
            total += layer.units_in * layer.units_out + layer.units_out
    return total


class _Identity:
    """Null quantization hook."""

    def weight(self, pid, w):
        return w, None

    def activation(self, point, a):
        return a, None


_NO_QUANT = _Identity()


@dataclass
class ForwardCache:
    inputs: list
    aux: list
    weights: dict
    weight_masks: dict
    act_masks: dict
    probs: Optional[np.ndarray] = None


def forward(graph: ModelGraph, x, *, training=False, rng=None, quant=None, cache=False):
    """Run the model; returns softmax probabilities (and the cache if asked).

    ``quant`` is an optional hook object with ``weight(id, w)`` and
    ``activation(point, a)`` methods, each returning ``(value, ste_mask)``;
    it is how fake quantization is injected during training.
    """
    hooks = quant if quant is not None else _NO_QUANT
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != graph.input_shape:
        raise ValueError(f"input shape {x.shape} != (N, {graph.input_shape})")
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    points = set(activation_points(graph.layers))
    c = ForwardCache([], [], {}, {}, {})
    a, m = hooks.activation(INPUT_POINT, x)
    c.act_masks[INPUT_POINT] = m
    for i, layer in enumerate(graph.layers):
        c.inputs.append(a)
        aux = None
        if isinstance(layer, PARAMETRIC):
            wid, bid = graph.slot(i)
            w, wm = hooks.weight(wid, graph.params[wid])
            c.weights[wid], c.weight_masks[wid] = w, wm
            b = graph.params[bid]
            if isinstance(layer, Conv2D):
                a = L.conv2d_forward(a, w, b, layer.stride, layer.padding)
            elif isinstance(layer, DepthwiseConv2D):
                a = L.depthwise_conv2d_forward(a, w, b, layer.stride, layer.padding)
            else:
                a = L.dense_forward(a, w, b)
        elif isinstance(layer, Pool):
            if layer.kind == "max":
                a, aux = L.maxpool_forward(a, layer.window, layer.stride)
            else:
                a = L.global_avg_pool_forward(a)
        elif isinstance(layer, Activation):
            a = L.activation_forward(a, layer.kind)
        elif isinstance(layer, Dropout):
            a, aux = L.dropout_forward(a, layer.rate, rng, training)
        elif isinstance(layer, Flatten):
            a = a.reshape(a.shape[0], -1)
        elif isinstance(layer, Softmax):
            a = L.softmax(a)
        c.aux.append(aux)
        if i in points:
            a, m = hooks.activation(i, a)
            c.act_masks[i] = m
    c.probs = a
    return (a, c) if cache else a


def backward(graph: ModelGraph, c: ForwardCache, onehot) -> Tuple[List[np.ndarray], np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every parameter and the input.

    The final Softmax is fused with the loss: the gradient at the logits
    is ``(p - y) / N``.
    """
    if not isinstance(graph.layers[-1], Softmax):
        raise ValueError("backward requires a final Softmax layer")
    y = np.asarray(onehot, dtype=c.probs.dtype)
    grads: List[Optional[np.ndarray]] = [None] * len(graph.params)
    d = (c.probs - y) / c.probs.shape[0]
    for i in range(len(graph.layers) - 2, -1, -1):
        layer = graph.layers[i]
        m = c.act_masks.get(i)
        if m is not None:
            d = d * m
        x = c.inputs[i]
        if isinstance(layer, PARAMETRIC):
            wid, bid = graph.slot(i)
            w = c.weights[wid]
            if isinstance(layer, Conv2D):
                d, dw, db = L.conv2d_backward(x, w, d, layer.stride, layer.padding)
            elif isinstance(layer, DepthwiseConv2D):
                d, dw, db = L.depthwise_conv2d_backward(x, w, d, layer.stride, layer.padding)
            else:
                d, dw, db = L.dense_backward(x, w, d)
            if c.weight_masks.get(wid) is not None:
                dw = dw * c.weight_masks[wid]
            grads[wid], grads[bid] = dw, db
        elif isinstance(layer, Pool):
            if layer.kind == "max":
                d = L.maxpool_backward(x.shape, c.aux[i], d, layer.window, layer.stride)
            else:
                d = L.global_avg_pool_backward(x.shape, d)
        elif isinstance(layer, Activation):
            d = L.activation_backward(x, d, layer.kind)
        elif isinstance(layer, Dropout):
            if c.aux[i] is not None:
                d = d * c.aux[i]
        elif isinstance(layer, Flatten):
            d = d.reshape(x.shape)
    m = c.act_masks.get(INPUT_POINT)
    if m is not None:
        d = d * m
    return grads, d


def one_hot(labels, k, dtype=np.float32):
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], k), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def model_backward(graph: ModelGraph, batch, labels, *, rng=None, training=False, quant=None):
    """Loss and per-parameter gradients for one batch of integer labels."""
    probs, c = forward(graph, batch, training=training, rng=rng, quant=quant, cache=True)
    y = one_hot(labels, graph.class_count, dtype=probs.dtype)
    grads, _ = backward(graph, c, y)
    return L.cross_entropy_loss(probs, y), grads


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(layers: Sequence[LayerSpec], rng) -> List[np.ndarray]:
    params = []
    for layer in layers:
        if isinstance(layer, Conv2D):
            fan_in = layer.kh * layer.kw * layer.cin
        elif isinstance(layer, DepthwiseConv2D):
            fan_in = layer.kh * layer.kw
        elif isinstance(layer, Dense):
            fan_in = layer.units_in
        else:
            continue
        wshape, bshape = layer.param_shapes()
        params.append(he_uniform(rng, wshape, fan_in))
        params.append(np.zeros(bshape, dtype=np.float32))
    return params


def build_reference_model(kind: str, input_size: int = 32, class_count: int = 7, *,
                          hidden: int = 128, dropout: float = 0.5, seed: int = 0) -> ModelGraph:
    """Desk-scale stand-ins: ``micro_cnn`` (plain conv stack) or
    ``micro_mobilenet`` (depthwise-separable blocks)."""
    if input_size not in SUPPORTED_INPUT_SIZES:
        raise ValueError(f"input size must be one of {SUPPORTED_INPUT_SIZES}, got {input_size}")
    if not 128 <= hidden <= 256:
        raise ValueError("hidden width must be within [128, 256]")
    if kind == "micro_cnn":
        s = input_size // 4
        layers = [
            Conv2D(3, 3, 1, 8), Activation("relu"), Pool("max", 2, 2),
            Conv2D(3, 3, 8, 16), Activation("relu"), Pool("max", 2, 2),
            Flatten(), Dense(s * s * 16, hidden), Activation("relu"), Dropout(dropout),
            Dense(hidden, class_count), Softmax(),
        ]
    elif kind == "micro_mobilenet":
        layers = [
            Conv2D(3, 3, 1, 8, stride=2), Activation("relu6"),
            DepthwiseConv2D(3, 3, 8), Activation("relu6"),
            Conv2D(1, 1, 8, 16), Activation("relu6"),
            DepthwiseConv2D(3, 3, 16, stride=2), Activation("relu6"),
            Conv2D(1, 1, 16, 32), Activation("relu6"),
            Pool("global_avg"), Dropout(dropout),
            Dense(32, class_count), Softmax(),
        ]
    else:
        raise ValueError(f"unknown reference model {kind!r}")
    rng = np.random.default_rng(seed)
    return ModelGraph(layers, init_params(layers, rng), input_size, class_count, name=kind)
