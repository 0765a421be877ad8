"""Deterministic functional-plus-cost simulator of the PIM machine.

Executes a planned aggregation producing exact numeric output (wide
accumulators, overflow-checked narrowing) and accounts the execution
breakdown: feature-tile transfer into the banks (Host-PIM), the per-core
multiply-accumulate kernel (Kernel), retrieval of output partials (PIM-Host),
host-side assembly (Merge), plus the host-side dense partitioning cost
(Other).  Parallel bank transfers require equal payloads per device, so
payloads are zero-padded to the device maximum and the padding is accounted.

Time models (profile lookups snap to the closest calibrated size):

  t_host_pim = cores x max_bytes_to_core / host_pim_bw
  t_kernel   = max over cores of (nnz/thread_scaling + serial_ops) / fma(chunk)
  t_pim_host = cores x max_bytes_from_core / pim_host_bw
  t_merge    = output_bytes / host_bw + (sp-1) x output_elems / add_throughput

The serial term covers split-row commits: under coarse locking one commit per
owner of a thread-shared row, under the lock-free scheme one merge pass over
the reserved scratchpad slots by a single thread.  Host merge work for rows
split across cores is applied numerically but not billed separately.

Everything is pure and sequential; per-cluster results reduce in cluster
order, so outputs and reports are byte-identical across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .costmodel import CostProfile
from .matrices import DenseMatrix, SparseMatrix
from .partition import (
    Balance, CoreScheme, PafConfig, SyncMode, TilePlan, _build_plan,
    assign_within_core, split_nnz_even, validate_capacity,
)
from .topology import PimTopology

REPORT_SCHEMA_VERSION = 1
CSV_COLUMNS = ("record", "name", "seconds", "bytes_to_pim", "bytes_from_pim",
               "padding_bytes", "max_nnz_per_core")


class BaselineKind(str, Enum):
    GRANDE = "grande"
    SP1 = "sp1"
    SP2 = "sp2"


@dataclass(frozen=True)
class CoreReport:
    cluster: int
    device: int
    core: int
    nnz: int
    rows: int
    t_kernel: float
    bytes_to: int
    bytes_from: int


@dataclass(frozen=True)
class ClusterReport:
    cluster: int
    device: int
    sp_index: int
    dp_index: int
    slice_nnz: int
    t_kernel: float
    bytes_to: int
    bytes_from: int
    max_nnz_per_core: int


@dataclass(frozen=True)
class ExecutionReport:
    t_host_pim: float
    t_kernel: float
    t_pim_host: float
    t_merge: float
    t_other: float
    bytes_to_pim: int
    bytes_from_pim: int
    padding_to_pim: int
    padding_from_pim: int
    max_nnz_per_core: int
    max_bytes_to_core: int
    max_bytes_from_core: int
    utilization_pct: float
    idle_cores: int = 0
    clusters: tuple[ClusterReport, ...] = ()
    cores: tuple[CoreReport, ...] = ()

    @property
    def t_total(self) -> float:
        return (self.t_host_pim + self.t_kernel + self.t_pim_host
                + self.t_merge + self.t_other)

    @property
    def padding_bytes(self) -> int:
        return self.padding_to_pim + self.padding_from_pim

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "steps": {
                "host_pim": self.t_host_pim,
                "kernel": self.t_kernel,
                "pim_host": self.t_pim_host,
                "merge": self.t_merge,
                "other": self.t_other,
            },
            "t_total": self.t_total,
            "bytes": {
                "to_pim": self.bytes_to_pim,
                "from_pim": self.bytes_from_pim,
                "padding": self.padding_bytes,
                "padding_to_pim": self.padding_to_pim,
                "padding_from_pim": self.padding_from_pim,
            },
            "max": {
                "nnz_per_core": self.max_nnz_per_core,
                "bytes_to_core": self.max_bytes_to_core,
                "bytes_from_core": self.max_bytes_from_core,
            },
            "utilization_pct": self.utilization_pct,
            "idle_cores": self.idle_cores,
            "clusters": [
                {
                    "cluster": c.cluster, "device": c.device,
                    "sparse_partition": c.sp_index, "dense_partition": c.dp_index,
                    "slice_nnz": c.slice_nnz, "t_kernel": c.t_kernel,
                    "bytes_to": c.bytes_to, "bytes_from": c.bytes_from,
                    "max_nnz_per_core": c.max_nnz_per_core,
                }
                for c in self.clusters
            ],
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def csv_rows(self) -> list[tuple]:
        rows = [CSV_COLUMNS]
        for name, t in (("host_pim", self.t_host_pim), ("kernel", self.t_kernel),
                        ("pim_host", self.t_pim_host), ("merge", self.t_merge),
                        ("other", self.t_other)):
            rows.append(("step", name, repr(t), "", "", "", ""))
        rows.append(("total", "t_total", repr(self.t_total),
                     str(self.bytes_to_pim), str(self.bytes_from_pim),
                     str(self.padding_bytes), str(self.max_nnz_per_core)))
        for c in self.clusters:
            rows.append(("cluster", str(c.cluster), repr(c.t_kernel),
                         str(c.bytes_to), str(c.bytes_from), "",
                         str(c.max_nnz_per_core)))
        return rows


def _pad_per_device(per_core: list[tuple[int, int]], n_devices: int):
    """per_core holds (device, bytes).  Returns (padded_total, padding,
    device_max list, global_max)."""
    dev_max = [0] * n_devices
    dev_count = [0] * n_devices
    for dev, b in per_core:
        dev_max[dev] = max(dev_max[dev], b)
        dev_count[dev] += 1
    padded_total = sum(m * c for m, c in zip(dev_max, dev_count))
    raw_total = sum(b for _, b in per_core)
    return padded_total, padded_total - raw_total, dev_max, max(dev_max, default=0)


def host_pim_transfer(plan: TilePlan, profile: CostProfile):
    """Per-bank feature-tile payloads, transfer time, and padding."""
    per_core = [(cl.device, plan.core_to_bytes(cl))
                for cl in plan.clusters for _ in cl.cores]
    total, padding, dev_max, max_bytes = _pad_per_device(per_core, plan.topo.n_devices)
    cores = len(per_core)
    t = cores * max_bytes / profile.host_pim_bytes_per_s(max_bytes) if max_bytes else 0.0
    return total, padding, max_bytes, t


def pim_host_transfer(plan: TilePlan, profile: CostProfile):
    """Per-bank output-partial payloads, transfer time, and padding.  Rows
    split across cores are counted once per owner."""
    per_core = [(cl.device, plan.core_from_bytes(cl, core))
                for cl in plan.clusters for core in cl.cores]
    total, padding, dev_max, max_bytes = _pad_per_device(per_core, plan.topo.n_devices)
    cores = len(per_core)
    t = cores * max_bytes / profile.pim_host_bytes_per_s(max_bytes) if max_bytes else 0.0
    return total, padding, max_bytes, t


def _core_partial(slice_m: SparseMatrix, entry_rows: np.ndarray, span: Span,
                  tile_acc: np.ndarray, acc_dtype) -> np.ndarray:
    out = np.zeros((span.n_rows, tile_acc.shape[1]), acc_dtype)
    s, e = span.nnz_start, span.nnz_end
    if s == e or span.n_rows == 0:
        return out
    rows = entry_rows[s:e] - span.row_start
    cols = slice_m.colind[s:e]
    vals = slice_m.values[s:e].astype(acc_dtype)
    np.add.at(out, rows, vals[:, None] * tile_acc[cols])
    return out


def kernel_time(nnz: int, serial_ops: int, tile_cols: int, threads: int,
                profile: CostProfile, topo: PimTopology) -> float:
    """One core's kernel time: thread-scaled multiply-accumulate over its
    non-zeros plus the serialized split-row commits."""
    per_op = 1.0 / profile.fma_chunk_rows_per_s(max(tile_cols, 1))
    scale = CostProfile.thread_scaling(threads, topo.pipeline_saturation_threads)
    return (nnz / scale + serial_ops) * per_op


def _serial_ops(core, sync: SyncMode) -> int:
    return core.lock_row_writes if sync is SyncMode.COARSE_LOCK else core.scratch_partial_slots


def simulate_aggregation(plan: TilePlan, f: DenseMatrix, profile: CostProfile,
                         topo: PimTopology | None = None,
                         idle_cores: int = 0) -> tuple[DenseMatrix, ExecutionReport]:
    """Execute the planned aggregation; returns the exact output and the
    cost-accounted report."""
    topo = topo or plan.topo
    if f.n_rows != plan.n or f.n_cols != plan.k:
        raise ValueError(f"feature matrix {f.n_rows}x{f.n_cols} does not match "
                         f"plan {plan.n}x{plan.k}")
    if f.value_kind != plan.value_kind:
        raise ValueError("feature value kind does not match plan")
    validate_capacity(plan, topo)

    acc_t = plan.value_kind.accumulator
    threads = topo.threads_per_core
    row_block_bytes = max(cl.tile_cols for cl in plan.clusters) * plan.elem_bytes

    # Other: host-side partitioning of the dense matrix, modeled as one copy
    # of the feature matrix through host memory at tile-row granularity.
    t_other = f.nbytes / profile.host_bytes_per_s(row_block_bytes)

    bytes_to, padding_to, max_to, t_host_pim = host_pim_transfer(plan, profile)
    bytes_from, padding_from, max_from, t_pim_host = pim_host_transfer(plan, profile)

    f_acc = f.values.astype(acc_t)
    slice_entry_rows = [s.row_indices() for s in plan.slices]

    t_kernel = 0.0
    cluster_reports = []
    core_reports = []
    partials = []  # one list of per-core accumulator blocks per cluster
    for cl in plan.clusters:
        slice_m = plan.slices[cl.sp_index]
        entry_rows = slice_entry_rows[cl.sp_index]
        tile_acc = f_acc[cl.col_start:cl.col_end, cl.tile_col_start:cl.tile_col_end]
        t_cluster = 0.0
        max_nnz = 0
        cluster_partials = []
        for core in cl.cores:
            cluster_partials.append(
                _core_partial(slice_m, entry_rows, core.span, tile_acc, acc_t))
            t_core = kernel_time(core.span.nnz, _serial_ops(core, plan.cfg.sync),
                                 cl.tile_cols, threads, profile, topo)
            t_cluster = max(t_cluster, t_core)
            max_nnz = max(max_nnz, core.span.nnz)
            core_reports.append(CoreReport(
                cluster=cl.cluster, device=cl.device, core=core.core,
                nnz=core.span.nnz, rows=core.span.n_rows, t_kernel=t_core,
                bytes_to=plan.core_to_bytes(cl),
                bytes_from=plan.core_from_bytes(cl, core)))
        partials.append(cluster_partials)
        t_kernel = max(t_kernel, t_cluster)
        cluster_reports.append(ClusterReport(
            cluster=cl.cluster, device=cl.device, sp_index=cl.sp_index,
            dp_index=cl.dp_index, slice_nnz=cl.slice_nnz, t_kernel=t_cluster,
            bytes_to=plan.core_to_bytes(cl) * len(cl.cores),
            bytes_from=sum(plan.core_from_bytes(cl, c) for c in cl.cores),
            max_nnz_per_core=max_nnz))

    out, t_merge = merge(partials, plan, profile)

    edges = sum(s.nnz for s in plan.slices)
    report = ExecutionReport(
        t_host_pim=t_host_pim, t_kernel=t_kernel, t_pim_host=t_pim_host,
        t_merge=t_merge, t_other=t_other,
        bytes_to_pim=bytes_to, bytes_from_pim=bytes_from,
        padding_to_pim=padding_to, padding_from_pim=padding_from,
        max_nnz_per_core=plan.max_nnz_per_core(),
        max_bytes_to_core=max_to, max_bytes_from_core=max_from,
        utilization_pct=0.0, idle_cores=idle_cores,
        clusters=tuple(cluster_reports), cores=tuple(core_reports))
    report = _with_utilization(report, edges, plan.k, profile.peak_ops_per_s)
    return out, report


def merge(partials: list, plan: TilePlan, profile: CostProfile
          ) -> tuple[DenseMatrix, float]:
    """Assemble the output from per-core partial blocks and cost the merge.

    Numerically: partials accumulate into the output in cluster, then core,
    order (split rows sum across their owners).  Time follows the block
    copy-plus-reduction model: one 2D block copy per tile-column group plus
    sp-1 block reductions per group, at tile-row block granularity."""
    acc_t = plan.value_kind.accumulator
    out_acc = np.zeros((plan.n, plan.k), acc_t)
    for cl, cluster_partials in zip(plan.clusters, partials):
        for core, partial in zip(cl.cores, cluster_partials):
            if partial.shape != (core.span.n_rows, cl.tile_cols):
                raise ValueError(
                    f"partial for cluster {cl.cluster} core {core.core} has shape "
                    f"{partial.shape}, expected {(core.span.n_rows, cl.tile_cols)}")
            if core.span.n_rows:
                out_acc[core.span.row_start:core.span.row_end,
                        cl.tile_col_start:cl.tile_col_end] += partial
    out = DenseMatrix(plan.n, plan.k, plan.value_kind.narrow(out_acc),
                      plan.value_kind)

    row_block_bytes = max(cl.tile_cols for cl in plan.clusters) * plan.elem_bytes
    row_block_elems = max(cl.tile_cols for cl in plan.clusters)
    copy_bytes = 0
    add_elems = 0
    for k0, k1 in plan.geometry.tile_col_ranges:
        tile_elems = plan.n * (k1 - k0)
        copy_bytes += tile_elems * plan.elem_bytes
        add_elems += (plan.geometry.sp - 1) * tile_elems
    t = copy_bytes / profile.host_bytes_per_s(row_block_bytes)
    if add_elems:
        t += add_elems / profile.add_elems_per_s(row_block_elems)
    return out, t


def _with_utilization(report: ExecutionReport, edges: int, k: int,
                      peak: float) -> ExecutionReport:
    util = resource_utilization(report, edges, k, peak) if report.t_total > 0 else 0.0
    return replace(report, utilization_pct=util)


def resource_utilization(report: ExecutionReport, edges: int, k: int,
                         peak_ops_per_s: float) -> float:
    """Achieved fraction of peak throughput: operations (edges x hidden)
    divided by total time, as a percentage of peak."""
    if report.t_total <= 0:
        raise ValueError("t_total must be positive")
    return 100.0 * (edges * k / report.t_total) / peak_ops_per_s


# -- baselines -------------------------------------------------------------


def grande_plan(a: SparseMatrix, k: int, topo: PimTopology,
                threads: int | None = None) -> tuple[TilePlan, int]:
    """Prior-work 2D layout: feature rows across devices, hidden size across
    the cores of each device (one core per cluster).  Cores beyond the hidden
    size stay idle.  Returns (plan, idle core count)."""
    active = min(topo.cores_per_device, k)
    idle = (topo.cores_per_device - active) * topo.n_devices
    eff = PimTopology(
        n_devices=topo.n_devices, clusters_per_device=active,
        cores_per_cluster=1, threads_per_core=topo.threads_per_core,
        bank_capacity=topo.bank_capacity,
        scratchpad_capacity=topo.scratchpad_capacity,
        transfer_chunk=topo.transfer_chunk,
        pipeline_saturation_threads=topo.pipeline_saturation_threads)
    cfg = PafConfig(sp=topo.n_devices, dp=active, grp=active, format=a.format,
                    cluster_scheme=Balance.VERTEX, core_scheme=Balance.VERTEX,
                    sync=SyncMode.LOCK_FREE)
    plan = _build_plan(a, k, cfg, eff, threads=threads)
    return plan, idle


def _spmv_baseline(kind: BaselineKind, a: SparseMatrix, f: DenseMatrix,
                   topo: PimTopology, profile: CostProfile):
    """K independent column SpMVs parallelized across devices; the matrix is
    nnz-split (CP) across the cores of one device (SP1) or a device pair
    (SP2), with lock-free thread splits inside each core."""
    devices_per_spmv = 1 if kind is BaselineKind.SP1 else 2
    if topo.n_devices % devices_per_spmv:
        raise ValueError("SP2 needs an even device count")
    slots = topo.n_devices // devices_per_spmv
    cores_used = devices_per_spmv * topo.cores_per_device
    coo = a.to_coo()
    elem = f.value_kind.nbytes
    acc_t = f.value_kind.accumulator
    n, k = a.n_rows, f.n_cols

    spans = split_nnz_even(coo.rowind, coo.nnz, cores_used)
    serials = []
    for span in spans:
        _, _, lock_writes, slots_lf = assign_within_core(
            coo, span, topo.threads_per_core, CoreScheme.CP, SyncMode.LOCK_FREE)
        serials.append(slots_lf)

    # Per-column structure is identical for every column (the nnz split
    # depends only on A); columns round-robin across device groups, so a full
    # round keeps slots x cores_used cores busy and K columns move K x
    # cores_used column replicas in total.
    per_op = 1.0 / profile.fma_chunk_rows_per_s(1)
    scale = CostProfile.thread_scaling(topo.threads_per_core,
                                       topo.pipeline_saturation_threads)
    t_kernel_col = max((s.nnz / scale + ser) * per_op
                       for s, ser in zip(spans, serials))
    x_bytes = n * elem  # dense column replicated at every core
    t_host_pim = k * cores_used * x_bytes / profile.host_pim_bytes_per_s(x_bytes)
    from_bytes = [(i // topo.cores_per_device, s.n_rows * elem)
                  for i, s in enumerate(spans)]
    tot_from_col, pad_from_col, _, max_from = _pad_per_device(from_bytes, devices_per_spmv)
    t_pim_host = (k * cores_used * max_from / profile.pim_host_bytes_per_s(max_from)
                  if max_from else 0.0)
    boundary_adds = sum(1 for s in spans if s.split_head)
    t_merge_col = (n * elem) / profile.host_bytes_per_s(elem)
    if boundary_adds:
        t_merge_col += boundary_adds / profile.add_elems_per_s(2)

    rounds = -(-k // slots)
    t_kernel = rounds * t_kernel_col
    t_merge = k * t_merge_col  # merge per column happens on the host serially
    t_other = f.nbytes / profile.host_bytes_per_s(elem)

    # Functional result: each core span contributes its rows for all columns.
    f_acc = f.values.astype(acc_t)
    out_acc = np.zeros((n, k), acc_t)
    entry_rows = coo.rowind
    for span in spans:
        s, e = span.nnz_start, span.nnz_end
        if s == e:
            continue
        rows = entry_rows[s:e]
        vals = coo.values[s:e].astype(acc_t)
        np.add.at(out_acc, rows, vals[:, None] * f_acc[coo.colind[s:e]])
    out = DenseMatrix(n, k, f.value_kind.narrow(out_acc), f.value_kind)

    max_nnz = max(s.nnz for s in spans)
    report = ExecutionReport(
        t_host_pim=t_host_pim, t_kernel=t_kernel, t_pim_host=t_pim_host,
        t_merge=t_merge, t_other=t_other,
        bytes_to_pim=k * cores_used * x_bytes,
        bytes_from_pim=k * tot_from_col,
        padding_to_pim=0, padding_from_pim=k * pad_from_col,
        max_nnz_per_core=max_nnz, max_bytes_to_core=x_bytes,
        max_bytes_from_core=max_from, utilization_pct=0.0)
    report = _with_utilization(report, coo.nnz, k, profile.peak_ops_per_s)
    return out, report


def simulate_baseline(kind: BaselineKind, a: SparseMatrix, f: DenseMatrix,
                      topo: PimTopology, profile: CostProfile
                      ) -> tuple[DenseMatrix, ExecutionReport]:
    """Run one of the prior-work layouts.  The 2D layout may legitimately
    raise CapacityError on graphs whose per-bank footprint exceeds the bank."""
    if kind is BaselineKind.GRANDE:
        plan, idle = grande_plan(a, f.n_cols, topo)
        return simulate_aggregation(plan, f, profile, idle_cores=idle)
    return _spmv_baseline(kind, a, f, topo, profile)
