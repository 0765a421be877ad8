"""Three-level aggregation planning.

Level 1 splits work across PIM clusters: the adjacency matrix is cut into
``sp`` vertical (column-range) slices and the feature matrix into ``sp``
horizontal x ``dp`` vertical tiles; tile (i, j) goes to cluster ``i*dp + j``.
Level 2 distributes a cluster's slice across its cores, level 3 across the
threads of each core.  Four balancing schemes exist:

  RV  (CSR)  equal row counts per core/thread
  RE  (CSR)  equal non-zero counts at row granularity (greedy prefix)
  CE  (COO)  equal non-zero counts at row granularity (greedy prefix)
  CP  (COO)  near-perfect non-zero split; a row may span two or more
             neighboring cores/threads and the partial row results are merged
             downstream (by the host across cores, by a designated thread or
             under a global mutex across threads)

All "equal" splits give the remainder to the leading partitions, so sizes
differ by at most one.  Plans are pure data and deterministic: identical
inputs produce byte-identical plans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .matrices import Format, SparseMatrix, ValueKind
from .topology import MAX_THREADS_PER_CORE, PimTopology

INDEX_BYTES = 4  # device-side index width


class Balance(str, Enum):
    VERTEX = "ver"
    EDGE = "edg"


class SyncMode(str, Enum):
    COARSE_LOCK = "coarse-lock"
    LOCK_FREE = "lock-free"


class CoreScheme(str, Enum):
    RV = "rv"
    RE = "re"
    CE = "ce"
    CP = "cp"


_SCHEME_TABLE = {
    (Format.CSR, Balance.VERTEX): CoreScheme.RV,
    (Format.CSR, Balance.EDGE): CoreScheme.RE,
    (Format.COO, Balance.VERTEX): CoreScheme.CE,
    (Format.COO, Balance.EDGE): CoreScheme.CP,
}


def concrete_scheme(fmt: Format, balance: Balance) -> CoreScheme:
    """Map (format, vertex/edge balance) to the named scheme."""
    return _SCHEME_TABLE[(fmt, balance)]


def _check_scheme_format(scheme: CoreScheme, fmt: Format):
    if scheme in (CoreScheme.RV, CoreScheme.RE) and fmt is not Format.CSR:
        raise ValueError(f"{scheme.value} requires CSR row iteration")
    if scheme in (CoreScheme.CE, CoreScheme.CP) and fmt is not Format.COO:
        raise ValueError(f"{scheme.value} requires COO storage")


class PlanError(ValueError):
    pass


class CapacityError(RuntimeError):
    """A core's bank cannot hold its slice, feature tile, and output partial."""

    def __init__(self, msg, *, cluster=None, core=None, breakdown=None):
        super().__init__(msg)
        self.cluster = cluster
        self.core = core
        self.breakdown = breakdown or {}


@dataclass(frozen=True)
class PafConfig:
    """Full aggregation configuration."""

    sp: int
    dp: int
    grp: int
    format: Format = Format.CSR
    cluster_scheme: Balance = Balance.EDGE
    core_scheme: Balance = Balance.EDGE
    sync: SyncMode = SyncMode.LOCK_FREE

    def __post_init__(self):
        if self.sp < 1 or self.dp < 1 or self.grp < 1:
            raise PlanError("sp, dp, and grp must be >= 1")

    def validate_for(self, topo: PimTopology):
        if self.grp not in (1, 2, 4):
            raise PlanError("clusters per device must be 1, 2 or 4")
        total = topo.n_devices * self.grp
        if self.sp * self.dp != total:
            raise PlanError(
                f"sp x dp = {self.sp}x{self.dp} = {self.sp * self.dp} must equal "
                f"total clusters {topo.n_devices} devices x {self.grp} = {total}")

    def to_json(self) -> dict:
        return {
            "sp": self.sp, "dp": self.dp, "grp": self.grp,
            "format": self.format.value,
            "cluster_scheme": self.cluster_scheme.value,
            "core_scheme": self.core_scheme.value,
            "sync": self.sync.value,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PafConfig":
        return cls(sp=d["sp"], dp=d["dp"], grp=d["grp"],
                   format=Format(d["format"]),
                   cluster_scheme=Balance(d["cluster_scheme"]),
                   core_scheme=Balance(d["core_scheme"]),
                   sync=SyncMode(d["sync"]))


def split_even(total: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous ranges covering [0, total); leading ranges take the remainder."""
    base, rem = divmod(total, parts)
    ranges, start = [], 0
    for p in range(parts):
        size = base + (1 if p < rem else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


@dataclass(frozen=True)
class TileGeometry:
    n: int
    k: int
    sp: int
    dp: int
    col_ranges: tuple[tuple[int, int], ...]       # adjacency column slices
    tile_col_ranges: tuple[tuple[int, int], ...]  # feature column tiles

    def cluster_of_tile(self, sp_index: int, dp_index: int) -> int:
        return sp_index * self.dp + dp_index

    def tile_of_cluster(self, cluster: int) -> tuple[int, int]:
        return divmod(cluster, self.dp)[0], cluster % self.dp


def _plan_geometry(n: int, k: int, sp: int, dp: int) -> TileGeometry:
    if sp > n:
        raise PlanError(f"sp={sp} exceeds matrix dimension {n}")
    if dp > k:
        raise PlanError(f"dp={dp} exceeds hidden size {k}")
    return TileGeometry(
        n=n, k=k, sp=sp, dp=dp,
        col_ranges=tuple(split_even(n, sp)),
        tile_col_ranges=tuple(split_even(k, dp)),
    )


def plan_tiles(n: int, k: int, cfg: PafConfig, topo: PimTopology) -> TileGeometry:
    """Geometry of the across-cluster split: sp slices and sp x dp tiles."""
    cfg.validate_for(topo)
    topo.with_clusters_per_device(cfg.grp)  # rejects non-divisible groupings
    return _plan_geometry(n, k, cfg.sp, cfg.dp)


def slice_sparse(a: SparseMatrix, column_ranges) -> list[SparseMatrix]:
    """Cut a matrix into vertical slices with columns re-based to zero.

    The ranges must tile [0, n_cols) exactly.  Row structure is preserved
    (empty rows keep their CSR rowptr entries).
    """
    ranges = list(column_ranges)
    covered = 0
    for s, e in ranges:
        if s != covered:
            raise PlanError("column ranges must tile the matrix exactly")
        covered = e
    if covered != a.n_cols:
        raise PlanError("column ranges must cover all columns")
    rows = a.row_indices()
    cols = a.colind
    vals = a.values
    out = []
    for s, e in ranges:
        mask = (cols >= s) & (cols < e)
        m = SparseMatrix(a.n_rows, e - s, Format.COO, a.value_kind,
                         rowind=rows[mask], colind=cols[mask] - s,
                         values=vals[mask])
        out.append(m.with_format(a.format))
    return out


@dataclass(frozen=True)
class Span:
    """A contiguous piece of a slice: rows [row_start, row_end) whose entries
    occupy [nnz_start, nnz_end) in storage order.  ``split_head`` marks the
    first row as shared with the previous span (CP only)."""

    row_start: int
    row_end: int
    nnz_start: int
    nnz_end: int
    split_head: bool = False
    split_tail: bool = False

    @property
    def nnz(self) -> int:
        return self.nnz_end - self.nnz_start

    @property
    def n_rows(self) -> int:
        return max(0, self.row_end - self.row_start)


def _row_spans_from_ranges(row_ranges, cum_nnz) -> list[Span]:
    return [Span(r0, r1, int(cum_nnz[r0]), int(cum_nnz[r1])) for r0, r1 in row_ranges]


def split_rows_even(n_rows: int, parts: int, cum_nnz) -> list[Span]:
    """RV: equal row counts (difference at most one)."""
    return _row_spans_from_ranges(split_even(n_rows, parts), cum_nnz)


def split_rows_by_nnz(row_nnz: np.ndarray, parts: int, cum_nnz) -> list[Span]:
    """RE/CE greedy prefix split at row granularity.

    Walk rows accumulating non-zeros against a moving target of
    remaining/parts-left; close the current range once taking the next row
    would land strictly farther from the target than stopping.  Each range
    takes at least one row while rows remain.
    """
    n = len(row_nnz)
    remaining = int(row_nnz.sum())
    ranges = []
    row = 0
    for p in range(parts):
        left = parts - p
        if p == parts - 1:
            ranges.append((row, n))
            break
        target = remaining / left
        start, acc = row, 0
        while row < n:
            nxt = int(row_nnz[row])
            if row > start and abs(acc + nxt - target) > abs(acc - target):
                break
            acc += nxt
            row += 1
        ranges.append((start, row))
        remaining -= acc
    return _row_spans_from_ranges(ranges, cum_nnz)


def split_nnz_even(entry_rows: np.ndarray, total_nnz: int, parts: int) -> list[Span]:
    """CP: contiguous non-zero ranges of near-equal size; boundary rows split."""
    pieces = split_even(total_nnz, parts)
    spans = []
    for s, e in pieces:
        if s == e:
            spans.append(Span(0, 0, s, e))
            continue
        r0 = int(entry_rows[s])
        r1 = int(entry_rows[e - 1]) + 1
        head = s > 0 and int(entry_rows[s - 1]) == r0
        tail = e < total_nnz and int(entry_rows[e]) == r1 - 1
        spans.append(Span(r0, r1, s, e, split_head=head, split_tail=tail))
    return spans


def _split_spans(slice_m: SparseMatrix, scheme: CoreScheme, parts: int,
                 base: Span | None = None) -> list[Span]:
    """Split a whole slice (base=None) or one span of it into ``parts``."""
    if base is None:
        base = Span(0, slice_m.n_rows, 0, slice_m.nnz)
    entry_rows = slice_m.row_indices()[base.nnz_start:base.nnz_end]
    if scheme is CoreScheme.CP:
        spans = split_nnz_even(entry_rows, base.nnz, parts)
        return [Span(s.row_start, s.row_end, s.nnz_start + base.nnz_start,
                     s.nnz_end + base.nnz_start, s.split_head, s.split_tail)
                for s in spans]
    # Row-granularity schemes act on the base's rows; counts are restricted
    # to the base's own entries so that boundary rows a CP core only partly
    # owns are balanced by the owned part.
    if base.nnz:
        local_nnz = np.bincount(entry_rows - base.row_start,
                                minlength=base.n_rows).astype(np.int64)
    else:
        local_nnz = np.zeros(base.n_rows, np.int64)
    local_cum = np.zeros(base.n_rows + 1, np.int64)
    np.cumsum(local_nnz, out=local_cum[1:])
    if scheme is CoreScheme.RV:
        spans = split_rows_even(base.n_rows, parts, local_cum)
    else:  # RE / CE
        spans = split_rows_by_nnz(local_nnz, parts, local_cum)
    return [Span(s.row_start + base.row_start, s.row_end + base.row_start,
                 s.nnz_start + base.nnz_start, s.nnz_end + base.nnz_start)
            for s in spans]


def assign_within_cluster(slice_m: SparseMatrix, cores: int,
                          scheme: CoreScheme) -> list[Span]:
    """Distribute one cluster's slice across its cores."""
    if cores < 1:
        raise PlanError("cores must be >= 1")
    _check_scheme_format(scheme, slice_m.format)
    return _split_spans(slice_m, scheme, cores)


@dataclass(frozen=True)
class ThreadAssignment:
    thread: int
    span: Span


@dataclass(frozen=True)
class CoreAssignment:
    core: int
    span: Span
    threads: tuple[ThreadAssignment, ...]
    thread_boundary_splits: int  # rows shared between adjacent threads
    lock_row_writes: int         # split-row commits serialized by the mutex
    scratch_partial_slots: int   # lock-free partial-row buffers


def assign_within_core(slice_m: SparseMatrix, core_span: Span, threads: int,
                       scheme: CoreScheme, sync: SyncMode) -> tuple:
    """Split one core's chunk across its threads.

    Returns (thread spans, boundary splits, lock writes, scratchpad slots).
    Only CP produces thread-shared rows; under coarse locking every commit of
    a shared row goes through the global mutex, under lock-free each boundary
    reserves one scratchpad partial slot merged by a single thread.
    """
    if not 1 <= threads <= MAX_THREADS_PER_CORE:
        raise PlanError(f"threads must be in [1, {MAX_THREADS_PER_CORE}], got {threads}")
    _check_scheme_format(scheme, slice_m.format)
    spans = _split_spans(slice_m, scheme, threads, base=core_span)
    tas = tuple(ThreadAssignment(i, s) for i, s in enumerate(spans))
    boundaries = sum(1 for s in spans if s.split_head)
    lock_writes = 0
    slots = 0
    if scheme is CoreScheme.CP and boundaries:
        # A row shared by m threads is committed m times; m = boundary count
        # on that row plus one.
        shared_rows = {s.row_start for s in spans if s.split_head}
        if sync is SyncMode.COARSE_LOCK:
            lock_writes = boundaries + len(shared_rows)
        else:
            slots = boundaries
    return tas, boundaries, lock_writes, slots


def scratchpad_usage(threads: int, partial_slots: int, tile_cols: int,
                     elem_bytes: int, topo: PimTopology) -> int:
    """Scratchpad bytes needed by one core: per-thread fetch buffers plus a
    feature-row buffer and an output-row accumulator, plus lock-free partial
    slots."""
    row_bytes = tile_cols * elem_bytes
    per_thread = 2 * topo.transfer_chunk + 2 * row_bytes
    return threads * per_thread + partial_slots * row_bytes


@dataclass(frozen=True)
class ClusterPlan:
    cluster: int
    device: int
    sp_index: int
    dp_index: int
    col_start: int
    col_end: int
    tile_col_start: int
    tile_col_end: int
    slice_nnz: int
    cores: tuple[CoreAssignment, ...]

    @property
    def tile_rows(self) -> int:
        return self.col_end - self.col_start

    @property
    def tile_cols(self) -> int:
        return self.tile_col_end - self.tile_col_start

    @property
    def core_split_row_pairs(self) -> int:
        """Row shares between adjacent cores (partials merged by the host)."""
        return sum(1 for c in self.cores if c.span.split_head)


@dataclass(frozen=True)
class TilePlan:
    n: int
    k: int
    cfg: PafConfig
    topo: PimTopology  # regrouped to cfg.grp clusters per device
    value_kind: ValueKind
    geometry: TileGeometry
    slices: tuple[SparseMatrix, ...]
    clusters: tuple[ClusterPlan, ...]

    @property
    def elem_bytes(self) -> int:
        return self.value_kind.nbytes

    def tile_bytes(self, cluster: ClusterPlan) -> int:
        return cluster.tile_rows * cluster.tile_cols * self.elem_bytes

    def core_to_bytes(self, cluster: ClusterPlan) -> int:
        # The feature tile is replicated at every core of the cluster.
        return self.tile_bytes(cluster)

    def core_from_bytes(self, cluster: ClusterPlan, core: CoreAssignment) -> int:
        return core.span.n_rows * cluster.tile_cols * self.elem_bytes

    def core_slice_bytes(self, cluster: ClusterPlan, core: CoreAssignment) -> int:
        nnz = core.span.nnz
        if self.cfg.format is Format.CSR:
            return (core.span.n_rows + 1) * INDEX_BYTES + nnz * (INDEX_BYTES + self.elem_bytes)
        return nnz * (2 * INDEX_BYTES + self.elem_bytes)

    def _per_device(self, per_core_value) -> list[list[int]]:
        devs = [[] for _ in range(self.topo.n_devices)]
        for cl in self.clusters:
            for core in cl.cores:
                devs[cl.device].append(per_core_value(cl, core))
        return devs

    def device_padded_to_bytes(self) -> list[int]:
        """Per device, the padded (max) Host-to-bank payload."""
        return [max(v) if v else 0
                for v in self._per_device(lambda cl, c: self.core_to_bytes(cl))]

    def device_padded_from_bytes(self) -> list[int]:
        return [max(v) if v else 0
                for v in self._per_device(lambda cl, c: self.core_from_bytes(cl, c))]

    def max_nnz_per_core(self) -> int:
        return max((c.span.nnz for cl in self.clusters for c in cl.cores), default=0)

    def to_json(self) -> dict:
        clusters = []
        for cl in self.clusters:
            cores = []
            for c in cl.cores:
                cores.append({
                    "core": c.core,
                    "rows": [c.span.row_start, c.span.row_end],
                    "nnz": c.span.nnz,
                    "split_head": c.span.split_head,
                    "split_tail": c.span.split_tail,
                    "bytes_to": self.core_to_bytes(cl),
                    "bytes_from": self.core_from_bytes(cl, c),
                    "slice_bytes": self.core_slice_bytes(cl, c),
                    "scratch_partial_slots": c.scratch_partial_slots,
                    "lock_row_writes": c.lock_row_writes,
                    "threads": [
                        {"thread": t.thread,
                         "rows": [t.span.row_start, t.span.row_end],
                         "nnz": t.span.nnz,
                         "split_head": t.span.split_head,
                         "split_tail": t.span.split_tail}
                        for t in c.threads
                    ],
                })
            clusters.append({
                "cluster": cl.cluster,
                "device": cl.device,
                "sparse_partition": cl.sp_index,
                "dense_partition": cl.dp_index,
                "columns": [cl.col_start, cl.col_end],
                "tile_cols": [cl.tile_col_start, cl.tile_col_end],
                "slice_nnz": cl.slice_nnz,
                "tile_bytes": self.tile_bytes(cl),
                "cores": cores,
            })
        return {
            "schema_version": 1,
            "n": self.n,
            "k": self.k,
            "value_kind": self.value_kind.value,
            "config": self.cfg.to_json(),
            "topology": {
                "n_devices": self.topo.n_devices,
                "clusters_per_device": self.topo.clusters_per_device,
                "cores_per_cluster": self.topo.cores_per_cluster,
                "threads_per_core": self.topo.threads_per_core,
            },
            "device_padded_to_bytes": self.device_padded_to_bytes(),
            "device_padded_from_bytes": self.device_padded_from_bytes(),
            "clusters": clusters,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def build_tile_plan(a: SparseMatrix, k: int, cfg: PafConfig,
                    topo: PimTopology, threads: int | None = None) -> TilePlan:
    """Materialize the full three-level plan for adjacency ``a`` and hidden
    size ``k``.  The adjacency must be square (it is the normalized matrix)."""
    cfg.validate_for(topo)
    effective = topo.with_clusters_per_device(cfg.grp)
    return _build_plan(a, k, cfg, effective, threads)


def _build_plan(a: SparseMatrix, k: int, cfg: PafConfig,
                effective: PimTopology, threads: int | None = None) -> TilePlan:
    """Plan against an already-regrouped machine view.  Baseline layouts use
    this entry to sidestep the 1/2/4 clusters-per-device rule."""
    if a.n_rows != a.n_cols:
        raise PlanError("adjacency must be square")
    if effective.total_clusters != cfg.sp * cfg.dp:
        raise PlanError("sp x dp must equal the machine's cluster count")
    geo = _plan_geometry(a.n_rows, k, cfg.sp, cfg.dp)
    a_fmt = a.with_format(cfg.format)
    slices = slice_sparse(a_fmt, geo.col_ranges)
    threads = effective.threads_per_core if threads is None else threads
    if not 1 <= threads <= MAX_THREADS_PER_CORE:
        raise PlanError(f"threads must be in [1, {MAX_THREADS_PER_CORE}]")
    # The core pipeline saturates: threads beyond the saturation point add no
    # modeled benefit, so work is split at the effective width.
    threads = min(threads, effective.pipeline_saturation_threads)
    cl_scheme = concrete_scheme(cfg.format, cfg.cluster_scheme)
    co_scheme = concrete_scheme(cfg.format, cfg.core_scheme)

    # Core and thread structure depends only on the slice, not on the dense
    # partition, so compute it once per sparse partition.
    per_slice_cores: list[tuple[CoreAssignment, ...]] = []
    for s in slices:
        spans = assign_within_cluster(s, effective.cores_per_cluster, cl_scheme)
        cores = []
        for i, span in enumerate(spans):
            tas, bounds, lock_writes, slots = assign_within_core(
                s, span, threads, co_scheme, cfg.sync)
            cores.append(CoreAssignment(i, span, tas, bounds, lock_writes, slots))
        per_slice_cores.append(tuple(cores))

    clusters = []
    for cluster_id in range(effective.total_clusters):
        sp_idx, dp_idx = divmod(cluster_id, geo.dp)
        c0, c1 = geo.col_ranges[sp_idx]
        k0, k1 = geo.tile_col_ranges[dp_idx]
        cl = ClusterPlan(
            cluster=cluster_id,
            device=effective.device_of_cluster(cluster_id),
            sp_index=sp_idx, dp_index=dp_idx,
            col_start=c0, col_end=c1,
            tile_col_start=k0, tile_col_end=k1,
            slice_nnz=slices[sp_idx].nnz,
            cores=per_slice_cores[sp_idx],
        )
        # Scratchpad usage depends on tile width, so check per cluster.
        for core in cl.cores:
            used = scratchpad_usage(threads, core.scratch_partial_slots,
                                    cl.tile_cols, a.value_kind.nbytes, effective)
            if used > effective.scratchpad_capacity:
                raise CapacityError(
                    f"scratchpad overflow on cluster {cluster_id} core {core.core}: "
                    f"{used} > {effective.scratchpad_capacity} bytes",
                    cluster=cluster_id, core=core.core,
                    breakdown={"scratchpad_needed": used,
                               "scratchpad_capacity": effective.scratchpad_capacity})
        clusters.append(cl)

    return TilePlan(n=a.n_rows, k=k, cfg=cfg, topo=effective,
                    value_kind=a.value_kind, geometry=geo,
                    slices=tuple(slices), clusters=tuple(clusters))


def validate_capacity(plan: TilePlan, topo: PimTopology | None = None,
                      elem_bytes: int | None = None) -> None:
    """Check every core's bank can hold its slice portion, its replicated
    feature tile, and its output partial.  Raises CapacityError naming the
    first offending core with a byte breakdown."""
    topo = topo or plan.topo
    elem = elem_bytes if elem_bytes is not None else plan.elem_bytes
    for cl in plan.clusters:
        tile_b = cl.tile_rows * cl.tile_cols * elem
        for core in cl.cores:
            nnz, nrows = core.span.nnz, core.span.n_rows
            if plan.cfg.format is Format.CSR:
                slice_b = (nrows + 1) * INDEX_BYTES + nnz * (INDEX_BYTES + elem)
            else:
                slice_b = nnz * (2 * INDEX_BYTES + elem)
            out_b = nrows * cl.tile_cols * elem
            total = slice_b + tile_b + out_b
            if total > topo.bank_capacity:
                raise CapacityError(
                    f"cluster {cl.cluster} core {core.core} needs {total} bytes "
                    f"(slice {slice_b} + tile {tile_b} + output {out_b}) "
                    f"> bank capacity {topo.bank_capacity}",
                    cluster=cl.cluster, core=core.core,
                    breakdown={"slice_bytes": slice_b, "tile_bytes": tile_b,
                               "output_bytes": out_b, "total_bytes": total,
                               "bank_capacity": topo.bank_capacity})


def check_full_replica_capacity(n: int, k: int, elem_bytes: int,
                                topo: PimTopology) -> None:
    """Feasibility of the full-feature-replica layout used by prior near-rank
    designs: every bank holds the whole N x K feature matrix.  Raises exactly
    when that replica exceeds the bank capacity."""
    replica = n * k * elem_bytes
    if replica > topo.bank_capacity:
        raise CapacityError(
            f"full feature replica of {replica} bytes ({n} x {k} x {elem_bytes}) "
            f"exceeds bank capacity {topo.bank_capacity}",
            breakdown={"replica_bytes": replica,
                       "bank_capacity": topo.bank_capacity})
