"""Unstructured per-tensor magnitude pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..nn.model import ModelGraph
from ..nn.train import ArrayDataset, fit


@dataclass
class SparsityMask:
    """0/1 mask per prunable weight tensor, keyed by parameter id."""

    masks: Dict[int, np.ndarray]

    def apply(self, graph: ModelGraph) -> ModelGraph:
        self.check(graph)
        g = graph.copy()
        for pid, m in self.masks.items():
            g.params[pid] = g.params[pid] * m.astype(g.params[pid].dtype)
        return g

    def check(self, graph: ModelGraph) -> None:
        if sorted(self.masks) != sorted(graph.weight_ids()):
            raise ValueError("mask does not cover exactly the graph's weight tensors")
        for pid, m in self.masks.items():
            if m.shape != graph.params[pid].shape:
                raise ValueError(f"mask {pid} shape {m.shape} != parameter shape {graph.params[pid].shape}")

    def sparsity(self) -> Dict[int, float]:
        return {pid: float(1.0 - m.mean()) for pid, m in self.masks.items()}


def pruned_count(target: float, numel: int) -> int:
    """Smallest k with k / numel >= target."""
    # target * numel can land one ulp off an integer (0.7 * 10 == 7.000000000000001)
    k = min(numel, math.ceil(target * numel))
    while k > 0 and (k - 1) / numel >= target:
        k -= 1
    while k < numel and k / numel < target:
        k += 1
    return k


def prune_magnitude(graph: ModelGraph, target_sparsity: float) -> SparsityMask:
    """Mask the smallest-magnitude weights of every conv/depthwise/dense tensor.

    ``pruned_count(target, numel)`` entries are masked per tensor so the achieved
    sparsity lands in ``[target, target + 1/numel]``.  Ties on magnitude
    go to the lower flat index.  Biases are never pruned.
    """
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError(f"target sparsity must be in [0, 1), got {target_sparsity}")
    masks = {}
    for pid in graph.weight_ids():
        w = graph.params[pid]
        k = pruned_count(target_sparsity, w.size)
        flat = np.ones(w.size, dtype=np.uint8)
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        flat[order[:k]] = 0
        masks[pid] = flat.reshape(w.shape)
    return SparsityMask(masks)


def tensor_sparsity(graph: ModelGraph) -> Dict[int, float]:
    """Fraction of exact zeros in each weight tensor."""
    return {pid: float(np.mean(graph.params[pid] == 0)) for pid in graph.weight_ids()}


def prune_finetune(graph: ModelGraph, mask: SparsityMask, prune_lr: float, prune_epochs: int,
                   train_set: ArrayDataset, *, batch_size: int = 32, seed: int = 0,
                   rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """Fine-tune with the mask re-applied after every optimizer step."""
    mask.check(graph)
    pruned = mask.apply(graph)
    if prune_epochs == 0:
        return pruned
    rng = rng if rng is not None else np.random.default_rng(seed)
    g, _ = fit(pruned, train_set, batch_size=batch_size, lr=prune_lr, epochs=prune_epochs,
               rng=rng, masks=mask.masks)
    return g
