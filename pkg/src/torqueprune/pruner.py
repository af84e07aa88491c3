"""Structural pruning: drop low-norm groups and their coupled input slices.

A plan names output groups to remove; applying it returns a smaller model
with every downstream input column/channel that depended on those groups
deleted as well.  MACs accounting (multiply-accumulates for one input
instance) backs the speed-up metric: speed-up = MACs_base / MACs_pruned,
and accuracy-drop = pruned - base (positive means the pruned model is
better).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    ConstructionError,
    GroupedLayer,
    ModelGraph,
    _conv_out_hw,
    derive_couplings,
    group_norm_values,
)
from .tensor import ContractError, Tensor

__all__ = [
    "MacsReport",
    "PrunePlan",
    "UnreachableTargetError",
    "count_macs",
    "speedup",
    "accuracy_drop",
    "plan_by_threshold",
    "plan_by_budget",
    "apply_plan",
]


class UnreachableTargetError(ValueError):
    """The requested speed-up exceeds what pruning can deliver."""

    def __init__(self, target: float, max_achievable: float):
        self.target = target
        self.max_achievable = max_achievable
        super().__init__(
            f"target speed-up {target:g} is unreachable; "
            f"maximum achievable is {max_achievable:.6g}"
        )


@dataclass(frozen=True)
class MacsReport:
    per_layer: tuple  # ((layer index, MAC count), ...)
    total: int


@dataclass(frozen=True)
class PrunePlan:
    removals: tuple  # ((layer index, group index), ...), sorted
    mode: str  # "threshold" | "budget"
    threshold_used: float
    predicted_speedup: float

    def removed_per_layer(self, n_layers: int) -> list:
        counts = [0] * n_layers
        for l, _ in self.removals:
            counts[l] += 1
        return counts


# ---------------------------------------------------------------------------
# MACs accounting


def count_macs(model: ModelGraph, input_shape=None) -> MacsReport:
    """Multiply-accumulate count per layer for a single input instance.

    Dense: out*in.  Conv: C_out*C_in*K^2*H_out*W_out.  Biases, activations
    and pooling are excluded.
    """
    shape = tuple(input_shape) if input_shape is not None else tuple(model.input_shape)
    per_layer = []
    for idx, (layer, pool) in enumerate(zip(model.layers, model.pools)):
        if layer.kind == "conv2d":
            if len(shape) != 3 or shape[0] != layer.weight.shape[1]:
                raise ConstructionError(f"conv layer {idx} cannot consume input shape {shape}")
            k = layer.weight.shape[2]
            h2, w2 = _conv_out_hw(shape[1], shape[2], k, layer.stride, layer.padding)
            macs = layer.group_count * layer.weight.shape[1] * k * k * h2 * w2
            if pool:
                h2, w2 = h2 // 2, w2 // 2
            shape = (layer.group_count, h2, w2)
        else:
            flat = int(np.prod(shape))
            if flat != layer.in_size:
                raise ConstructionError(f"dense layer {idx} expects {layer.in_size} inputs, receives {flat}")
            macs = layer.group_count * layer.in_size
            shape = (layer.group_count,)
        per_layer.append((idx, int(macs)))
    return MacsReport(per_layer=tuple(per_layer), total=sum(m for _, m in per_layer))


def speedup(base: MacsReport, pruned: MacsReport) -> float:
    if pruned.total <= 0:
        raise ContractError(f"pruned MAC total must be positive, got {pruned.total}")
    return base.total / pruned.total


def accuracy_drop(base_metric: float, pruned_metric: float) -> float:
    """Signed difference pruned - base; positive means the pruned model improved."""
    return pruned_metric - base_metric


def _macs_after_removal(model: ModelGraph, removed_counts) -> MacsReport:
    """MACs of the model that apply_plan would produce, from shape arithmetic alone."""
    shape = tuple(model.input_shape)
    per_layer = []
    in_override = None  # input size of the current layer after upstream pruning
    for idx, (layer, pool) in enumerate(zip(model.layers, model.pools)):
        out = layer.group_count - removed_counts[idx]
        if layer.kind == "conv2d":
            c_in = in_override if in_override is not None else shape[0]
            k = layer.weight.shape[2]
            h2, w2 = _conv_out_hw(shape[1], shape[2], k, layer.stride, layer.padding)
            macs = out * c_in * k * k * h2 * w2
            if pool:
                h2, w2 = h2 // 2, w2 // 2
            shape = (layer.group_count, h2, w2)
        else:
            flat = in_override if in_override is not None else int(np.prod(shape))
            macs = out * flat
            shape = (layer.group_count,)
        per_layer.append((idx, int(macs)))
        if idx < len(model.layers) - 1:
            coupling = model.couplings[idx]
            if coupling.kind == "conv_to_dense":
                in_override = model.layers[idx + 1].in_size - removed_counts[idx] * coupling.block
            else:
                in_override = model.layers[idx + 1].in_size - removed_counts[idx]
    return MacsReport(per_layer=tuple(per_layer), total=sum(m for _, m in per_layer))


# ---------------------------------------------------------------------------
# planning


def _threshold_removals(model: ModelGraph, norms, tau: float):
    """Groups with norm strictly below tau, never emptying a layer."""
    removals = []
    for l, layer_norms in enumerate(norms):
        below = [i for i, v in enumerate(layer_norms) if v < tau]
        if len(below) == len(layer_norms):
            # keep the single largest-norm group; ties keep the highest index,
            # matching "lower index pruned first"
            keep = max(range(len(layer_norms)), key=lambda i: (layer_norms[i], i))
            below = [i for i in below if i != keep]
        removals.extend((l, i) for i in below)
    return tuple(sorted(removals))


def _plan_with(model: ModelGraph, removals, mode: str, tau: float) -> PrunePlan:
    counts = [0] * len(model.layers)
    for l, _ in removals:
        counts[l] += 1
    base = count_macs(model)
    after = _macs_after_removal(model, counts)
    return PrunePlan(
        removals=tuple(removals),
        mode=mode,
        threshold_used=float(tau),
        predicted_speedup=speedup(base, after),
    )


def plan_by_threshold(model: ModelGraph, tau: float) -> PrunePlan:
    """Plan removal of every group whose norm is strictly below ``tau``."""
    if tau < 0:
        raise ContractError(f"threshold must be non-negative, got {tau}")
    norms = group_norm_values(model)
    return _plan_with(model, _threshold_removals(model, norms, tau), "threshold", tau)


def plan_by_budget(model: ModelGraph, target_speedup: float) -> PrunePlan:
    """Smallest threshold whose predicted speed-up reaches ``target_speedup``.

    The removal set is a step function of the threshold, so searching the
    finite candidate set {0} + distinct norms + just-above-max is exact.
    """
    if target_speedup < 1.0:
        raise ContractError(f"target speed-up must be >= 1, got {target_speedup}")
    norms = group_norm_values(model)
    flat = np.concatenate(norms)
    candidates = sorted({0.0, *flat.tolist(), float(np.nextafter(flat.max(), np.inf))})
    best = None
    for tau in candidates:
        plan = _plan_with(model, _threshold_removals(model, norms, tau), "budget", tau)
        if plan.predicted_speedup >= target_speedup:
            best = plan
            break  # speed-up grows with tau, so the first hit is the smallest
    if best is None:
        max_plan = _plan_with(model, _threshold_removals(model, norms, candidates[-1]), "budget", candidates[-1])
        raise UnreachableTargetError(target_speedup, max_plan.predicted_speedup)
    return best


# ---------------------------------------------------------------------------
# application


def _validate_plan(model: ModelGraph, plan: PrunePlan):
    seen = set()
    kept = [layer.group_count for layer in model.layers]
    for l, g in plan.removals:
        if not 0 <= l < len(model.layers):
            raise ConstructionError(f"plan references layer {l}, model has {len(model.layers)}")
        if not 0 <= g < model.layers[l].group_count:
            raise ConstructionError(f"plan references group {g} of layer {l}, which has {model.layers[l].group_count}")
        if (l, g) in seen:
            raise ConstructionError(f"plan removes ({l}, {g}) twice")
        seen.add((l, g))
        kept[l] -= 1
    for l, n in enumerate(kept):
        if n < 1:
            raise ConstructionError(f"plan would empty layer {l}")


def apply_plan(model: ModelGraph, plan: PrunePlan) -> ModelGraph:
    """Return a new, smaller model; the input model is left untouched."""
    _validate_plan(model, plan)
    removed = [set() for _ in model.layers]
    for l, g in plan.removals:
        removed[l].add(g)
    survivors = [
        [i for i in range(layer.group_count) if i not in removed[l]]
        for l, layer in enumerate(model.layers)
    ]

    new_layers = []
    for l, layer in enumerate(model.layers):
        w = layer.weight.data[survivors[l]]
        if l > 0 and removed[l - 1]:
            coupling = model.couplings[l - 1]
            if coupling.kind == "conv_to_dense":
                cols = [
                    c
                    for i in survivors[l - 1]
                    for c in range(i * coupling.block, (i + 1) * coupling.block)
                ]
                w = w[:, cols]
            else:
                w = w[:, survivors[l - 1]]
        bias = None
        if layer.bias is not None:
            bias = Tensor(layer.bias.data[survivors[l]].copy(), requires_grad=True)
        new_layers.append(
            GroupedLayer(layer.kind, Tensor(w.copy(), requires_grad=True), bias, layer.stride, layer.padding)
        )

    pruned = ModelGraph(
        layers=new_layers,
        activations=list(model.activations),
        pools=list(model.pools),
        input_shape=tuple(model.input_shape),
    )
    pruned.couplings = derive_couplings(pruned)
    pruned.validate()
    return pruned
