"""Conversion of trained graphs into deployable containers, and the
prune -> fine-tune -> calibrate -> QAT -> int8 pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from ..nn.model import INPUT_POINT, ModelGraph, activation_points
from ..nn.train import ArrayDataset
from ..tensor import QuantParams, half_values, quantize_values
from .container import CompressedModel, ModelKind
from .pruning import prune_finetune, prune_magnitude
from .qat import QuantSpecs, calibrate, qat_finetune

INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


class MissingSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PqatConfig:
    prune_lr: float
    target_sparsity: float
    prune_epochs: int
    quant_lr: float
    quant_epochs: int

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError("target_sparsity must be in [0, 1)")
        if not (self.prune_lr > 0 and self.quant_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.prune_epochs < 0 or self.quant_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


# Fine-tuning recipes per network family (keys match the training presets;
# "mobilenet" is MobileNetV1).
PQAT_PRESETS: Dict[str, PqatConfig] = {
    "vgg16": PqatConfig(5e-6, 0.7, 1, 5e-6, 1),
    "inceptionv3": PqatConfig(1e-5, 0.5, 20, 1e-5, 5),
    "mobilenet": PqatConfig(1e-5, 0.7, 1, 1e-6, 5),
    "mobilenetv2": PqatConfig(5e-6, 0.1, 5, 5e-7, 5),
}


def input_point(layers, index: int) -> int:
    """Activation point whose tensor feeds layer ``index``."""
    before = [p for p in activation_points(layers) if p < index]
    return before[-1] if before else INPUT_POINT


def _meta(graph: ModelGraph, extra: Optional[dict]) -> dict:
    meta = {"name": graph.name}
    if extra:
        meta.update(extra)
    return meta


def convert_dense(graph: ModelGraph, pruned: bool = False, metadata: Optional[dict] = None) -> CompressedModel:
    kind = ModelKind.PRUNED32 if pruned else ModelKind.DENSE32
    params = [np.asarray(p, dtype=np.float32).copy() for p in graph.params]
    return CompressedModel(kind, list(graph.layers), params, graph.input_size, graph.class_count,
                           metadata=_meta(graph, metadata))


def convert_half(graph: ModelGraph, metadata: Optional[dict] = None) -> CompressedModel:
    params = [half_values(p) for p in graph.params]
    return CompressedModel(ModelKind.HALF16, list(graph.layers), params, graph.input_size,
                           graph.class_count, metadata=_meta(graph, metadata))


def convert_int8(graph: ModelGraph, specs: QuantSpecs, metadata: Optional[dict] = None) -> CompressedModel:
    """Symmetric int8 weights, int32 biases at ``s_input * s_weight``,
    and recorded params for every activation point."""
    points = activation_points(graph.layers)
    missing_w = [pid for pid in graph.weight_ids() if pid not in specs.weights]
    missing_a = [p for p in points if p not in specs.activations]
    if missing_w or missing_a:
        raise MissingSpecError(f"no spec for weights {missing_w} / activation points {missing_a}")
    n = len(graph.params)
    params = [None] * n
    qparams: Dict[int, QuantParams] = {}
    for k, p in enumerate(points):
        qparams[n + k] = specs.activations[p].qparams
    for i in range(len(graph.layers)):
        try:
            wid, bid = graph.slot(i)
        except KeyError:
            continue
        w_qp = specs.weights[wid].qparams
        in_scale = specs.activations[input_point(graph.layers, i)].qparams.scale
        params[wid] = quantize_values(graph.params[wid], w_qp)
        b_scale = float(np.float32(in_scale * w_qp.scale))
        qb = np.rint(graph.params[bid].astype(np.float64) / b_scale)
        params[bid] = np.clip(qb, INT32_MIN, INT32_MAX).astype(np.int32)
        qparams[wid] = w_qp
        qparams[bid] = QuantParams(b_scale, 0)
    return CompressedModel(ModelKind.INT8, list(graph.layers), params, graph.input_size,
                           graph.class_count, qparams, _meta(graph, metadata))


def pqat_pipeline(graph: ModelGraph, cfg: PqatConfig, train_set: ArrayDataset, calib_set,
                  *, batch_size: int = 32, seed: int = 0,
                  metadata: Optional[dict] = None) -> CompressedModel:
    """Prune, fine-tune, calibrate, QAT fine-tune, convert to int8.

    With zero target sparsity the pruning stage is skipped; with zero
    quantization epochs as well this is plain post-training quantization.
    """
    rng = np.random.default_rng(seed)
    mask = prune_magnitude(graph, cfg.target_sparsity)
    if cfg.target_sparsity > 0:
        g = prune_finetune(graph, mask, cfg.prune_lr, cfg.prune_epochs, train_set,
                           batch_size=batch_size, rng=rng)
    else:
        g = graph.copy()
    specs = calibrate(g, calib_set)
    g = qat_finetune(g, specs, cfg.quant_lr, cfg.quant_epochs, train_set,
                     masks=mask.masks if cfg.target_sparsity > 0 else None,
                     batch_size=batch_size, rng=rng)
    meta = {"pqat": asdict(cfg)}
    if metadata:
        meta.update(metadata)
    return convert_int8(g, specs, meta)


def post_training_quantize(graph: ModelGraph, calib_set, metadata: Optional[dict] = None) -> CompressedModel:
    return convert_int8(graph, calibrate(graph, calib_set), metadata)
