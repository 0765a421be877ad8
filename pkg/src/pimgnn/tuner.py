"""Configuration auto-tuning.

Calibration sweeps four microbenchmark families through the simulator's cost
paths to populate a CostProfile.  The search enumerates sparse partitions
over the divisors of the device count, 1/2/4 clusters per device (the dense
partition count follows from those two), and vertex/edge balance at the
cluster and core levels, scoring each candidate with four analytical time
models and returning the strictly best prediction (first found wins ties).

Candidate statistics (max per-core non-zeros and output rows) come from the
same splitting rules the planner uses, computed from per-slice row counts
without materializing payloads, so a full search stays well under a second
at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .costmodel import CalibrationGrid, CostProfile
from .matrices import Format, SparseMatrix
from .partition import (
    Balance, CoreScheme, PafConfig, SyncMode, concrete_scheme, split_even,
    split_nnz_even, split_rows_by_nnz, split_rows_even,
)
from .simulator import kernel_time
from .topology import PimTopology


def calibrate(topo: PimTopology, ground: CostProfile,
              grid: CalibrationGrid | None = None) -> CostProfile:
    """Populate a profile by running each microbenchmark family against the
    simulated machine at every grid point."""
    grid = grid or CalibrationGrid()
    cores = topo.total_cores

    host_pim = []
    for m in grid.host_pim_sizes:
        t = cores * m / ground.host_pim_bytes_per_s(m)
        host_pim.append((m, cores * m / t / 1e9))
    pim_host = []
    for m in grid.pim_host_sizes:
        t = cores * m / ground.pim_host_bytes_per_s(m)
        pim_host.append((m, cores * m / t / 1e9))
    host = []
    for m in grid.host_bw_sizes:
        t = m / ground.host_bytes_per_s(m)
        host.append((m, m / t / 1e9))
    fma = []
    reps = 4096
    for chunk in grid.fma_chunks:
        t = kernel_time(reps, 0, chunk, 1, ground, topo)
        fma.append((chunk, reps / t))
    add = []
    for block in grid.add_blocks:
        elems = block * 1024
        t = elems / ground.add_elems_per_s(block)
        add.append((block, elems / t))

    return CostProfile(
        host_pim_bw=host_pim, pim_host_bw=pim_host, host_bw=host,
        fma_core_throughput=fma, add_host_throughput=add,
        host_gemm_peak_ops=ground.host_gemm_peak_ops,
        peak_ops_per_s=ground.peak_ops_per_s)


@dataclass(frozen=True)
class TunerEstimate:
    t_host_pim: float
    t_kernel: float
    t_pim_host: float
    t_merge: float
    config: PafConfig

    def __post_init__(self):
        for name in ("t_host_pim", "t_kernel", "t_pim_host", "t_merge"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def t_total(self) -> float:
        return self.t_host_pim + self.t_kernel + self.t_pim_host + self.t_merge


class AggregationStats:
    """Cached per-slice splitting statistics for one graph.

    For a given sparse partition count the per-(slice, row) non-zero counts
    are derived once; scheme statistics reuse the planner's own splitting
    rules on those counts."""

    def __init__(self, a: SparseMatrix):
        if a.n_rows != a.n_cols:
            raise ValueError("adjacency must be square")
        coo = a.to_coo()
        self.n = a.n_rows
        self.nnz = a.nnz
        self.value_kind = a.value_kind
        self._rowind = coo.rowind
        self._colind = coo.colind
        self._slice_index: dict[int, np.ndarray] = {}
        self._slice_counts: dict[int, np.ndarray] = {}
        self._scheme_stats: dict[tuple, tuple[int, int]] = {}

    def _index(self, sp: int) -> np.ndarray:
        if sp not in self._slice_index:
            starts = np.array([s for s, _ in split_even(self.n, sp)], np.int64)
            self._slice_index[sp] = np.searchsorted(
                starts, self._colind, side="right") - 1
        return self._slice_index[sp]

    def _counts(self, sp: int) -> np.ndarray:
        if sp not in self._slice_counts:
            flat = np.bincount(self._index(sp) * self.n + self._rowind,
                               minlength=sp * self.n)
            self._slice_counts[sp] = flat.reshape(sp, self.n).astype(np.int64)
        return self._slice_counts[sp]

    def core_stats(self, sp: int, cores: int, scheme: CoreScheme) -> tuple[int, int]:
        """(max nnz, max owned rows) over all cores of all clusters."""
        key = (sp, cores, scheme)
        if key in self._scheme_stats:
            return self._scheme_stats[key]
        counts = self._counts(sp)
        max_nnz = 0
        max_rows = 0
        for i in range(sp):
            row_nnz = counts[i]
            if scheme is CoreScheme.CP:
                entry_rows = self._rowind[self._index(sp) == i]
                spans = split_nnz_even(entry_rows, len(entry_rows), cores)
            else:
                cum = np.zeros(self.n + 1, np.int64)
                np.cumsum(row_nnz, out=cum[1:])
                if scheme is CoreScheme.RV:
                    spans = split_rows_even(self.n, cores, cum)
                else:
                    spans = split_rows_by_nnz(row_nnz, cores, cum)
            max_nnz = max(max_nnz, max(s.nnz for s in spans))
            max_rows = max(max_rows, max(s.n_rows for s in spans))
        self._scheme_stats[key] = (max_nnz, max_rows)
        return self._scheme_stats[key]


def predict_time(stats: AggregationStats, hidden: int, cfg: PafConfig,
                 profile: CostProfile, topo: PimTopology) -> TunerEstimate:
    """Evaluate the four analytical time models for one configuration."""
    cfg.validate_for(topo)
    if topo.cores_per_device % cfg.grp:
        raise ValueError("cores per device not divisible by clusters per device")
    if cfg.sp > stats.n:
        raise ValueError(f"sp={cfg.sp} exceeds matrix dimension {stats.n}")
    if cfg.dp > hidden:
        raise ValueError(f"dp={cfg.dp} exceeds hidden size {hidden}")
    cores_per_cluster = topo.cores_per_device // cfg.grp
    total_cores = topo.total_cores
    elem = stats.value_kind.nbytes
    scheme = concrete_scheme(cfg.format, cfg.cluster_scheme)
    max_nnz, max_rows = stats.core_stats(cfg.sp, cores_per_cluster, scheme)

    tile_rows = -(-stats.n // cfg.sp)
    tile_cols = -(-hidden // cfg.dp)
    max_to = tile_rows * tile_cols * elem
    max_from = max_rows * tile_cols * elem

    t_host_pim = total_cores * max_to / profile.host_pim_bytes_per_s(max_to)
    t_kernel = kernel_time(max_nnz, 0, tile_cols, topo.threads_per_core,
                           profile, topo)
    t_pim_host = (total_cores * max_from / profile.pim_host_bytes_per_s(max_from)
                  if max_from else 0.0)
    copy_bytes = stats.n * hidden * elem
    t_merge = copy_bytes / profile.host_bytes_per_s(tile_cols * elem)
    if cfg.sp > 1:
        t_merge += (cfg.sp - 1) * stats.n * hidden / profile.add_elems_per_s(tile_cols)
    return TunerEstimate(t_host_pim, t_kernel, t_pim_host, t_merge, cfg)


@dataclass(frozen=True)
class Candidate:
    config: PafConfig
    estimate: TunerEstimate | None
    valid: bool
    reason: str = ""

    @property
    def t_total(self) -> float:
        return self.estimate.t_total if self.estimate else math.inf


@dataclass(frozen=True)
class TuneResult:
    best: PafConfig
    best_estimate: TunerEstimate
    candidates: tuple[Candidate, ...]

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "best": self.best.to_json(),
            "best_predicted": {
                "host_pim": self.best_estimate.t_host_pim,
                "kernel": self.best_estimate.t_kernel,
                "pim_host": self.best_estimate.t_pim_host,
                "merge": self.best_estimate.t_merge,
                "t_total": self.best_estimate.t_total,
            },
            "candidates": [
                {
                    "config": c.config.to_json(),
                    "valid": c.valid,
                    "reason": c.reason,
                    "predicted": None if c.estimate is None else {
                        "host_pim": c.estimate.t_host_pim,
                        "kernel": c.estimate.t_kernel,
                        "pim_host": c.estimate.t_pim_host,
                        "merge": c.estimate.t_merge,
                        "t_total": c.estimate.t_total,
                    },
                }
                for c in self.candidates
            ],
        }


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


class NoValidConfiguration(RuntimeError):
    pass


def tune(graph: SparseMatrix, hidden: int, topo: PimTopology,
         profile: CostProfile, fmt: Format,
         sync: SyncMode = SyncMode.LOCK_FREE,
         stats: AggregationStats | None = None) -> TuneResult:
    """Search the configuration space and return the best predicted config.

    Iterates sparse partitions over the divisors of the device count and
    1/2/4 clusters per device; candidates whose dense partition count exceeds
    the hidden size are skipped.  Comparison is strict, so ties keep the
    first-enumerated configuration."""
    if topo.n_devices < 1:
        raise ValueError("need at least one device")
    stats = stats or AggregationStats(graph.with_format(fmt))
    candidates: list[Candidate] = []
    best: Candidate | None = None
    for sp in divisors(topo.n_devices):
        for grp in (1, 2, 4):
            dp = (topo.n_devices // sp) * grp
            if dp > hidden:
                continue
            for cl in (Balance.VERTEX, Balance.EDGE):
                for cr in (Balance.VERTEX, Balance.EDGE):
                    cfg = PafConfig(sp=sp, dp=dp, grp=grp, format=fmt,
                                    cluster_scheme=cl, core_scheme=cr, sync=sync)
                    try:
                        est = predict_time(stats, hidden, cfg, profile, topo)
                        cand = Candidate(cfg, est, True)
                    except Exception as exc:  # geometry invalid for this machine
                        cand = Candidate(cfg, None, False, reason=str(exc))
                    candidates.append(cand)
                    if cand.valid and (best is None or cand.t_total < best.t_total):
                        best = cand
    if best is None:
        raise NoValidConfiguration(
            f"no valid configuration: every dense partition count exceeds "
            f"hidden size {hidden} or fails machine constraints")
    return TuneResult(best=best.config, best_estimate=best.estimate,
                      candidates=tuple(candidates))
