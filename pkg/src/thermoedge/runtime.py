"""Deployment-side inference over TLDM containers.

Three execution backends: binary32, binary16 storage with binary32
arithmetic, and an integer int8 path (int8 x int8 products accumulated
exactly, int32 biases, per-layer requantization).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .compression.container import CompressedModel, ModelKind, check_quant_coverage, deserialize, param_dtypes
from .errors import ModelFormatError
from .nn import layers as L
from .nn.model import INPUT_POINT, forward, param_slots
from .nn.train import EVAL_BATCH
from .tensor import QMAX, QMIN, QuantParams, dequantize_values, quantize_values


class Backend(enum.Enum):
    SINGLE32 = "single32"
    HALF16 = "half16"
    INT8 = "int8"


_BACKEND_FOR_KIND = {
    ModelKind.DENSE32: Backend.SINGLE32,
    ModelKind.PRUNED32: Backend.SINGLE32,
    ModelKind.HALF16: Backend.HALF16,
    ModelKind.INT8: Backend.INT8,
}


@dataclass(frozen=True)
class InferenceOutput:
    class_index: int
    confidence: float
    latency_us: float


def _requantize(acc, multiplier: float, zp_out: int, lo: int = QMIN, hi: int = QMAX) -> np.ndarray:
    """int accumulator -> int8 via a binary32 multiply, ties-to-even, clamp."""
    y = np.rint(np.asarray(acc).astype(np.float32) * np.float32(multiplier)) + np.float32(zp_out)
    return np.clip(y, lo, hi).astype(np.int8)


def _act_bounds(kind: Optional[str], qp: QuantParams):
    """Integer clamp range implementing relu / relu6 in the output domain."""
    lo, hi = QMIN, QMAX
    if kind in ("relu", "relu6"):
        lo = max(lo, qp.zero_point)
    if kind == "relu6":
        hi = min(hi, int(np.rint(6.0 / qp.scale)) + qp.zero_point)
    return lo, hi


class _Int8Plan:
    """Precomputed integer execution plan for one int8 container."""

    def __init__(self, model: CompressedModel):
        self.model = model
        ids = model.activation_ids()
        self.point_qp = {p: model.qparams[t] for p, t in ids.items()}
        self.input_qp = self.point_qp[INPUT_POINT]
        # weights as float64 integers: exact products and sums below 2**53
        self.wf = [p.astype(np.float64) for p in model.params]
        self.slots = param_slots(model.layers)

    def run(self, x) -> np.ndarray:
        """Return dequantized logits for a float input batch."""
        m = self.model
        layers = m.layers
        q = quantize_values(x, self.input_qp)
        qp = self.input_qp
        slots = self.slots
        i = 0
        while i < len(layers):
            layer = layers[i]
            nxt = layers[i + 1] if i + 1 < len(layers) else None
            if isinstance(layer, L.PARAMETRIC):
                wid, bid = slots[i]
                fused = nxt.kind if isinstance(nxt, L.Activation) else None
                out_point = i + 1 if fused else i
                out_qp = self.point_qp[out_point]
                xi = q.astype(np.float64) - qp.zero_point
                w = self.wf[wid]
                if isinstance(layer, L.Conv2D):
                    acc = L.conv2d_forward(xi, w, np.zeros(layer.cout), layer.stride, layer.padding)
                elif isinstance(layer, L.DepthwiseConv2D):
                    acc = L.depthwise_conv2d_forward(xi, w, np.zeros(layer.channels), layer.stride, layer.padding)
                else:
                    acc = L.dense_forward(xi, w, np.zeros(layer.units_out))
                acc = np.rint(acc).astype(np.int64) + m.params[bid].astype(np.int64)
                mult = qp.scale * m.qparams[wid].scale / out_qp.scale
                q = _requantize(acc, mult, out_qp.zero_point, *_act_bounds(fused, out_qp))
                qp = out_qp
                i += 2 if fused else 1
                continue
            if isinstance(layer, L.Pool):
                if layer.kind == "max":
                    q = L.maxpool_forward(q, layer.window, layer.stride)[0]
                else:
                    out_qp = self.point_qp[i]
                    h, w_ = q.shape[1], q.shape[2]
                    acc = (q.astype(np.int64) - qp.zero_point).sum(axis=(1, 2))
                    q = _requantize(acc, qp.scale / (h * w_ * out_qp.scale), out_qp.zero_point)
                    qp = out_qp
            elif isinstance(layer, L.Activation):
                out_qp = self.point_qp[i]
                acc = q.astype(np.int64) - qp.zero_point
                q = _requantize(acc, qp.scale / out_qp.scale, out_qp.zero_point,
                                *_act_bounds(layer.kind, out_qp))
                qp = out_qp
            elif isinstance(layer, L.Flatten):
                q = q.reshape(q.shape[0], -1)
            elif isinstance(layer, L.Softmax):
                break
            i += 1
        return dequantize_values(q, qp)


class RuntimeModel:
    """A loaded, immutable model; ``infer`` may be called concurrently."""

    def __init__(self, model: CompressedModel, label: Optional[str] = None,
                 clock: Callable[[], float] = time.perf_counter):
        _validate(model)
        self.model = model
        self.backend = _BACKEND_FOR_KIND[model.kind]
        self.label = label or self.backend.value
        self.clock = clock
        self.first_latency_us: Optional[float] = None
        if self.backend is Backend.INT8:
            self._plan = _Int8Plan(model)
            self._graph = None
        else:
            self._plan = None
            self._graph = model.to_graph()

    @property
    def input_shape(self):
        return (1, self.model.input_size, self.model.input_size, 1)

    def predict_probs(self, x) -> np.ndarray:
        """Softmax probabilities for a batch (N, S, S, 1)."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 4 or x.shape[1:] != self.input_shape[1:]:
            raise ValueError(f"input shape {x.shape} != (N, {self.input_shape[1:]})")
        if self._graph is not None:
            return forward(self._graph, x)
        return L.softmax(self._plan.run(x))

    def predict_logits(self, x) -> np.ndarray:
        if self._plan is None:
            raise ValueError("dequantized logits are only exposed by the int8 backend")
        return self._plan.run(np.asarray(x, dtype=np.float32))

    def predict_batches(self, x) -> np.ndarray:
        out = [self.predict_probs(x[i:i + EVAL_BATCH]) for i in range(0, len(x), EVAL_BATCH)]
        return np.concatenate(out, axis=0)

    def infer(self, x) -> InferenceOutput:
        x = np.asarray(x, dtype=np.float32)
        if x.shape != self.input_shape:
            raise ValueError(f"input shape {x.shape} != {self.input_shape}")
        t0 = self.clock()
        probs = self.predict_probs(x)[0]
        t1 = self.clock()
        k = int(np.argmax(probs))
        return InferenceOutput(k, float(probs[k]), (t1 - t0) * 1e6)

    def warmup(self) -> float:
        """Run one inference on a zero frame; returns its latency (us).

        Only the first call sets ``first_latency_us``.
        """
        latency = self.infer(np.zeros(self.input_shape, dtype=np.float32)).latency_us
        if self.first_latency_us is None:
            self.first_latency_us = latency
        return latency

    @property
    def warmed_up(self) -> bool:
        return self.first_latency_us is not None


def _validate(model: CompressedModel) -> None:
    check_quant_coverage(model)
    for p, dt in zip(model.params, param_dtypes(model.kind, model.layers)):
        if p.dtype.kind != dt.kind or p.dtype.itemsize != dt.itemsize:
            raise ModelFormatError(f"{model.kind.name} parameter has dtype {p.dtype}, expected {dt}")


def load_model(path, label: Optional[str] = None, clock: Callable[[], float] = time.perf_counter) -> RuntimeModel:
    return RuntimeModel(deserialize(path), label=label, clock=clock)


def infer(model: RuntimeModel, x) -> InferenceOutput:
    return model.infer(x)


def warmup(model: RuntimeModel) -> float:
    return model.warmup()
