"""Cooperative layer execution: aggregation on the simulated PIM machine,
combination (dense GEMM chain plus activation) on the host path.

The adjacency matrix is normalized per model kind and planned once; the plan
is reused across all layers.  Integer models run end to end in integer
arithmetic with wide accumulators and overflow-checked narrowing, so the
inference output is bit-exact against a pure-host reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .costmodel import CostProfile
from .matrices import (
    DEFAULT_WEIGHT_SCALE, DenseMatrix, Format, GnnKind, SparseMatrix,
    dense_spmm_oracle, normalize_adjacency,
)
from .partition import PafConfig, TilePlan, build_tile_plan
from .simulator import ExecutionReport, simulate_aggregation
from .topology import PimTopology
from .tuner import AggregationStats, tune


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"

    def apply(self, m: DenseMatrix) -> DenseMatrix:
        if self is Activation.IDENTITY:
            return m
        return DenseMatrix(m.n_rows, m.n_cols,
                           np.maximum(m.values, 0), m.value_kind)


@dataclass(frozen=True)
class Layer:
    weights: tuple[DenseMatrix, ...]
    activation: Activation = Activation.RELU


@dataclass(frozen=True)
class GnnModel:
    kind: GnnKind
    layers: tuple[Layer, ...]
    hidden: int
    eps: float = 0.0  # self-term weight offset, GIN only

    def __post_init__(self):
        width = None
        for i, layer in enumerate(self.layers):
            for w in layer.weights:
                if width is not None and w.n_rows != width:
                    raise ValueError(f"layer {i}: weight rows {w.n_rows} do not "
                                     f"chain with previous width {width}")
                width = w.n_cols


def host_gemm(f: DenseMatrix, w: DenseMatrix) -> DenseMatrix:
    """Dense product with wide accumulation and overflow-checked narrowing."""
    if f.n_cols != w.n_rows:
        raise ValueError(f"inner dimensions differ: {f.n_cols} vs {w.n_rows}")
    acc_t = f.value_kind.accumulator
    acc = f.values.astype(acc_t) @ w.values.astype(acc_t)
    return DenseMatrix(f.n_rows, w.n_cols, f.value_kind.narrow(acc), f.value_kind)


@dataclass(frozen=True)
class LayerReport:
    aggregation: ExecutionReport
    t_combination: float

    @property
    def t_total(self) -> float:
        return self.aggregation.t_total + self.t_combination


@dataclass(frozen=True)
class InferenceReport:
    layers: tuple[LayerReport, ...]
    config: PafConfig

    @property
    def t_total(self) -> float:
        return sum(l.t_total for l in self.layers)

    @property
    def bytes_to_pim(self) -> int:
        return sum(l.aggregation.bytes_to_pim for l in self.layers)

    @property
    def bytes_from_pim(self) -> int:
        return sum(l.aggregation.bytes_from_pim for l in self.layers)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_json(),
            "t_total": self.t_total,
            "bytes_to_pim": self.bytes_to_pim,
            "bytes_from_pim": self.bytes_from_pim,
            "layers": [
                {"aggregation": l.aggregation.to_json(),
                 "t_combination": l.t_combination}
                for l in self.layers
            ],
        }


def _combination_time(n_rows: int, flops_weights, profile: CostProfile) -> float:
    macs = sum(w.n_rows * w.n_cols for w in flops_weights) * n_rows
    return macs / profile.host_gemm_peak_ops


def run_layer(plan: TilePlan, f: DenseMatrix, layer: Layer,
              profile: CostProfile, topo: PimTopology | None = None
              ) -> tuple[DenseMatrix, LayerReport]:
    """One layer: planned aggregation on the PIM side, then the combination
    GEMM chain and activation on the host."""
    out, report = simulate_aggregation(plan, f, profile, topo)
    for w in layer.weights:
        out = host_gemm(out, w)
    out = layer.activation.apply(out)
    t_comb = _combination_time(f.n_rows, layer.weights, profile)
    return out, LayerReport(aggregation=report, t_combination=t_comb)


def run_inference(model: GnnModel, graph: SparseMatrix, features: DenseMatrix,
                  topo: PimTopology, profile: CostProfile,
                  cfg: PafConfig | str = "auto",
                  weight_scale: int = DEFAULT_WEIGHT_SCALE
                  ) -> tuple[DenseMatrix, InferenceReport]:
    """Multi-layer inference: normalize the adjacency for the model kind,
    pick a configuration (tuned when cfg='auto'), plan once, run layers."""
    if features.n_rows != graph.n_rows:
        raise ValueError("feature rows must match graph vertices")
    a_norm = normalize_adjacency(graph, model.kind, eps=model.eps,
                                 weight_scale=weight_scale)
    if cfg == "auto":
        cfg = tune(a_norm, model.hidden, topo, profile, graph.format).best
    elif not isinstance(cfg, PafConfig):
        raise ValueError("cfg must be a PafConfig or 'auto'")
    if not model.layers:
        return features, InferenceReport(layers=(), config=cfg)
    a_norm = a_norm.with_format(cfg.format)
    plan = build_tile_plan(a_norm, model.hidden, cfg, topo)

    out = features
    layer_reports = []
    for layer in model.layers:
        out, rep = run_layer(plan, out, layer, profile)
        layer_reports.append(rep)
    return out, InferenceReport(layers=tuple(layer_reports), config=cfg)


def reference_inference(model: GnnModel, graph: SparseMatrix,
                        features: DenseMatrix,
                        weight_scale: int = DEFAULT_WEIGHT_SCALE) -> DenseMatrix:
    """Pure-host single-threaded reference for the full inference pipeline."""
    a_norm = normalize_adjacency(graph, model.kind, eps=model.eps,
                                 weight_scale=weight_scale)
    out = features
    for layer in model.layers:
        out = dense_spmm_oracle(a_norm, out)
        for w in layer.weights:
            out = host_gemm(out, w)
        out = layer.activation.apply(out)
    return out
