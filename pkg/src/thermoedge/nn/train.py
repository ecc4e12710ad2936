"""Adam, training loop and accuracy evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import EmptyDatasetError
from .model import ModelGraph, forward, model_backward

EVAL_BATCH = 256

ArrayDataset = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 5
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


# Full-scale training recipes, one per network family.
TRAIN_PRESETS: Dict[str, TrainConfig] = {
    "mobilenet": TrainConfig(batch_size=32, learning_rate=1e-4, epochs=5, dropout_rate=0.5),
    "mobilenetv2": TrainConfig(batch_size=128, learning_rate=5e-6, epochs=120, dropout_rate=0.5),
    "vgg16": TrainConfig(batch_size=32, learning_rate=5e-5, epochs=25, dropout_rate=0.4),
    "inceptionv3": TrainConfig(batch_size=32, learning_rate=1e-6, epochs=150, dropout_rate=0.5),
}


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-7


def adam_step(params, grads, state: AdamState, lr: float,
              beta1=BETA1, beta2=BETA2, eps=EPSILON):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        dt = p.dtype.type
        m = dt(beta1) * m + dt(1 - beta1) * g
        v = dt(beta2) * v + dt(1 - beta2) * (g * g)
        m_hat = m / dt(1 - beta1 ** t)
        v_hat = v / dt(1 - beta2 ** t)
        new_p.append((p - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: Optional[float]


def _check(ds: Optional[ArrayDataset], name: str):
    if ds is None or len(ds[0]) == 0:
        raise EmptyDatasetError(f"{name} set is empty")
    if len(ds[0]) != len(ds[1]):
        raise ValueError(f"{name} images and labels differ in length")


def fit(graph: ModelGraph, train_set: ArrayDataset, *, batch_size: int, lr: float, epochs: int,
        rng: np.random.Generator, val_set: Optional[ArrayDataset] = None,
        masks: Optional[Dict[int, np.ndarray]] = None, quant=None,
        augment: Optional[Callable] = None) -> Tuple[ModelGraph, List[EpochRecord]]:
    """Mini-batch Adam training shared by plain training and fine-tuning.

    ``masks`` maps parameter id to a 0/1 array re-applied after every step;
    ``quant`` is a fake-quantization hook passed through to ``forward``.
    """
    _check(train_set, "training")
    x_all, y_all = train_set
    g = graph.copy()
    if masks:
        _apply_masks(g.params, masks)
    state = AdamState.zeros_like(g.params)
    history = []
    n = len(x_all)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = x_all[idx]
            if augment is not None:
                xb = augment(xb, rng)
            loss, grads = model_backward(g, xb, y_all[idx], rng=rng, training=True, quant=quant)
            if masks:
                _apply_masks(grads, masks)
            g.params, state = adam_step(g.params, grads, state, lr)
            if masks:
                _apply_masks(g.params, masks)
            losses.append(loss)
        val_acc = evaluate_accuracy(g, val_set, quant=quant) if val_set is not None else None
        history.append(EpochRecord(epoch + 1, float(np.mean(losses)), val_acc))
    return g, history


def _apply_masks(arrays: List[np.ndarray], masks: Dict[int, np.ndarray]):
    for pid, mask in masks.items():
        arrays[pid] = arrays[pid] * mask.astype(arrays[pid].dtype)


def train_model(graph: ModelGraph, train_set: ArrayDataset, val_set: Optional[ArrayDataset],
                cfg: TrainConfig, rng: Optional[np.random.Generator] = None, *,
                augment: Optional[Callable] = None):
    """Train with the given config; dropout layers take ``cfg.dropout_rate``.

    Deterministic for a fixed ``cfg.seed`` (or a fixed ``rng``).
    """
    if val_set is not None:
        _check(val_set, "validation")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return fit(graph.with_dropout(cfg.dropout_rate), train_set, batch_size=cfg.batch_size,
               lr=cfg.learning_rate, epochs=cfg.epochs, rng=rng, val_set=val_set, augment=augment)


def predict_probs(graph: ModelGraph, x, quant=None) -> np.ndarray:
    out = [forward(graph, x[i:i + EVAL_BATCH], quant=quant) for i in range(0, len(x), EVAL_BATCH)]
    return np.concatenate(out, axis=0)


def evaluate_accuracy(graph: ModelGraph, test_set: ArrayDataset, quant=None) -> float:
    """Fraction of samples whose argmax (lowest index on ties) is the label."""
    _check(test_set, "test")
    x, y = test_set
    pred = predict_probs(graph, x, quant=quant).argmax(axis=1)
    return float(np.mean(pred == np.asarray(y)))
