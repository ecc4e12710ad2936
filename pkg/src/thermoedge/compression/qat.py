"""Fake quantization, min/max calibration and quantization-aware fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import EmptyDatasetError
from ..nn.model import ModelGraph, activation_points, forward
from ..nn.train import EVAL_BATCH, ArrayDataset, fit
from ..tensor import QMAX, QMIN, QuantParams, compute_quant_params


def fake_quant(x, qp: QuantParams, return_mask: bool = False):
    """Quantize-then-dequantize.

    With ``return_mask`` also returns the straight-through gradient mask:
    1 where ``clip_min <= x <= clip_max``, 0 elsewhere.
    """
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.dtype(np.float32)
    xd = x.astype(np.float64)
    q = np.clip(np.rint(xd / qp.scale) + qp.zero_point, QMIN, QMAX)
    out = (qp.scale * (q - qp.zero_point)).astype(dtype)
    if not return_mask:
        return out
    mask = ((xd >= qp.clip_min) & (xd <= qp.clip_max)).astype(dtype)
    return out, mask


def fake_quant_grad(x, qp: QuantParams, upstream):
    """Straight-through gradient of ``fake_quant`` at ``x``."""
    return np.asarray(upstream) * fake_quant(x, qp, return_mask=True)[1]


@dataclass
class FakeQuantSpec:
    """Observed range of one tensor, frozen after calibration."""

    min_val: float
    max_val: float
    symmetric: bool = False
    qparams: QuantParams = field(init=False)

    def __post_init__(self):
        self.min_val = min(float(self.min_val), 0.0)
        self.max_val = max(float(self.max_val), 0.0)
        self.qparams = compute_quant_params(self.min_val, self.max_val, self.symmetric)


@dataclass
class QuantSpecs:
    """Per-tensor specs for weights (by parameter id) and activations
    (by activation point).  Doubles as the forward-pass quantization hook."""

    weights: Dict[int, FakeQuantSpec]
    activations: Dict[int, FakeQuantSpec]

    def weight(self, pid, w):
        spec = self.weights.get(pid)
        if spec is None:
            return w, None
        return fake_quant(w, spec.qparams, return_mask=True)

    def activation(self, point, a):
        spec = self.activations.get(point)
        if spec is None:
            return a, None
        return fake_quant(a, spec.qparams, return_mask=True)


class _RangeObserver:
    def __init__(self):
        self.ranges: Dict[int, list] = {}

    def weight(self, pid, w):
        return w, None

    def activation(self, point, a):
        lo, hi = float(a.min()), float(a.max())
        r = self.ranges.setdefault(point, [lo, hi])
        r[0], r[1] = min(r[0], lo), max(r[1], hi)
        return a, None


def representative_subset(x, n: int = 512, seed: int = 0) -> np.ndarray:
    """A seeded random draw of up to ``n`` samples for calibration.

    Split datasets are ordered by class, so a prefix is not representative.
    """
    x = np.asarray(x)
    idx = np.sort(np.random.default_rng(seed).permutation(len(x))[:n])
    return x[idx]


def calibrate(graph: ModelGraph, representative_set, batch_size: int = EVAL_BATCH) -> QuantSpecs:
    """Plain min/max calibration over every batch of the representative set."""
    x = representative_set[0] if isinstance(representative_set, tuple) else representative_set
    x = np.asarray(x)
    if x.size == 0 or len(x) == 0:
        raise EmptyDatasetError("representative set is empty")
    weights = {}
    for pid in graph.weight_ids():
        w = graph.params[pid]
        weights[pid] = FakeQuantSpec(float(w.min()), float(w.max()), symmetric=True)
    obs = _RangeObserver()
    for i in range(0, len(x), batch_size):
        forward(graph, x[i:i + batch_size], quant=obs)
    acts = {p: FakeQuantSpec(*obs.ranges[p]) for p in activation_points(graph.layers)}
    return QuantSpecs(weights, acts)


def qat_finetune(graph: ModelGraph, specs: QuantSpecs, quant_lr: float, quant_epochs: int,
                 train_set: ArrayDataset, *, masks: Optional[Dict[int, np.ndarray]] = None,
                 batch_size: int = 32, seed: int = 0,
                 rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """Train through fake-quantized weights and activations (specs stay frozen)."""
    if quant_epochs == 0:
        return graph.copy()
    rng = rng if rng is not None else np.random.default_rng(seed)
    g, _ = fit(graph, train_set, batch_size=batch_size, lr=quant_lr, epochs=quant_epochs,
               rng=rng, masks=masks, quant=specs)
    return g
