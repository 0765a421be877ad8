"""Calibrated throughput and bandwidth tables.

A CostProfile holds five (size -> value) tables: Host-to-bank and
bank-to-Host aggregate bandwidth keyed by per-core payload bytes, host memory
bandwidth keyed by copied block bytes, per-core fused multiply-add throughput
keyed by the element chunk fetched per non-zero, and host accumulate
throughput keyed by added block elements.  Lookups snap to the nearest table
key in log2 space with ties toward the smaller key, clamping outside the
range.

FMA throughput is stored as chunk-rows per second: one operation covers a
full multiply-accumulate of one non-zero against a feature row of the keyed
chunk width, so the time for one non-zero is 1/throughput(chunk).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

KIB = 1024
MIB = 1024 * 1024

# Default peak throughput used for the resource-utilization percentage
# (integer ops/s of the modeled machine).
DEFAULT_PEAK_OPS = 115.93e9


def closest_lookup(table: list[tuple[int, float]], size: float) -> float:
    """Value at the key nearest ``size`` in log2 space; ties pick the smaller
    key; queries outside the key range clamp to the nearest end."""
    if not table:
        raise ValueError("empty lookup table")
    if size <= table[0][0]:
        return table[0][1]
    if size >= table[-1][0]:
        return table[-1][1]
    logq = math.log2(size)
    best_key, best_val, best_dist = None, None, None
    for key, val in table:
        d = abs(math.log2(key) - logq)
        if best_dist is None or d < best_dist:
            best_key, best_val, best_dist = key, val, d
    return best_val


def _check_table(name, table):
    if not table:
        raise ValueError(f"{name} table is empty")
    last = 0
    for size, value in table:
        if size <= last:
            raise ValueError(f"{name} table keys must be strictly increasing")
        if value <= 0:
            raise ValueError(f"{name} table values must be positive")
        last = size


@dataclass(frozen=True)
class CostProfile:
    host_pim_bw: list[tuple[int, float]]      # payload bytes -> GB/s
    pim_host_bw: list[tuple[int, float]]      # payload bytes -> GB/s
    host_bw: list[tuple[int, float]]          # block bytes -> GB/s
    fma_core_throughput: list[tuple[int, float]]   # chunk elems -> chunk-rows/s
    add_host_throughput: list[tuple[int, float]]   # block elems -> elems/s
    host_gemm_peak_ops: float = 0.64e12       # host multiply-accumulate ops/s
    peak_ops_per_s: float = DEFAULT_PEAK_OPS

    def __post_init__(self):
        for name in ("host_pim_bw", "pim_host_bw", "host_bw",
                     "fma_core_throughput", "add_host_throughput"):
            table = [(int(s), float(v)) for s, v in getattr(self, name)]
            _check_table(name, table)
            object.__setattr__(self, name, table)
        if self.host_gemm_peak_ops <= 0 or self.peak_ops_per_s <= 0:
            raise ValueError("peak throughputs must be positive")

    # -- lookups ----------------------------------------------------------
    def host_pim_bytes_per_s(self, payload_bytes: int) -> float:
        return closest_lookup(self.host_pim_bw, payload_bytes) * 1e9

    def pim_host_bytes_per_s(self, payload_bytes: int) -> float:
        return closest_lookup(self.pim_host_bw, payload_bytes) * 1e9

    def host_bytes_per_s(self, block_bytes: int) -> float:
        return closest_lookup(self.host_bw, block_bytes) * 1e9

    def fma_chunk_rows_per_s(self, chunk_elems: int) -> float:
        return closest_lookup(self.fma_core_throughput, chunk_elems)

    def add_elems_per_s(self, block_elems: int) -> float:
        return closest_lookup(self.add_host_throughput, block_elems)

    @staticmethod
    def thread_scaling(threads: int, saturation: int) -> float:
        """Linear speedup up to the pipeline saturation point, flat beyond."""
        if threads < 1:
            raise ValueError("threads must be >= 1")
        return float(min(threads, saturation))

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "host_pim_bw": [[s, v] for s, v in self.host_pim_bw],
            "pim_host_bw": [[s, v] for s, v in self.pim_host_bw],
            "host_bw": [[s, v] for s, v in self.host_bw],
            "fma_core_throughput": [[s, v] for s, v in self.fma_core_throughput],
            "add_host_throughput": [[s, v] for s, v in self.add_host_throughput],
            "host_gemm_peak_ops": self.host_gemm_peak_ops,
            "peak_ops_per_s": self.peak_ops_per_s,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CostProfile":
        return cls(
            host_pim_bw=[(int(s), float(v)) for s, v in d["host_pim_bw"]],
            pim_host_bw=[(int(s), float(v)) for s, v in d["pim_host_bw"]],
            host_bw=[(int(s), float(v)) for s, v in d["host_bw"]],
            fma_core_throughput=[(int(s), float(v)) for s, v in d["fma_core_throughput"]],
            add_host_throughput=[(int(s), float(v)) for s, v in d["add_host_throughput"]],
            host_gemm_peak_ops=float(d.get("host_gemm_peak_ops", 0.64e12)),
            peak_ops_per_s=float(d.get("peak_ops_per_s", DEFAULT_PEAK_OPS)),
        )

    @classmethod
    def load(cls, path) -> "CostProfile":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def geometric_sizes(lo: int, hi: int, count: int) -> list[int]:
    """``count`` geometrically spaced integer sizes from lo to hi inclusive."""
    if count < 2 or lo >= hi:
        raise ValueError("need count >= 2 and lo < hi")
    ratio = (hi / lo) ** (1.0 / (count - 1))
    sizes = [int(round(lo * ratio**i)) for i in range(count)]
    sizes[0], sizes[-1] = lo, hi
    for i in range(1, count):
        if sizes[i] <= sizes[i - 1]:
            sizes[i] = sizes[i - 1] + 1
    return sizes


@dataclass(frozen=True)
class CalibrationGrid:
    """Microbenchmark sweep points: 16 per-core transfer sizes in
    [64 KiB, 8 MiB] for each transfer direction, 9 host copy block sizes in
    [8 B, 2 KiB], and 9 chunk/block element counts in [2, 512]."""

    host_pim_sizes: tuple[int, ...] = field(
        default_factory=lambda: tuple(geometric_sizes(64 * KIB, 8 * MIB, 16)))
    pim_host_sizes: tuple[int, ...] = field(
        default_factory=lambda: tuple(geometric_sizes(64 * KIB, 8 * MIB, 16)))
    host_bw_sizes: tuple[int, ...] = field(
        default_factory=lambda: tuple(geometric_sizes(8, 2 * KIB, 9)))
    fma_chunks: tuple[int, ...] = field(
        default_factory=lambda: tuple(geometric_sizes(2, 512, 9)))
    add_blocks: tuple[int, ...] = field(
        default_factory=lambda: tuple(geometric_sizes(2, 512, 9)))

    def __post_init__(self):
        expect = {"host_pim_sizes": (16, 64 * KIB, 8 * MIB),
                  "pim_host_sizes": (16, 64 * KIB, 8 * MIB),
                  "host_bw_sizes": (9, 8, 2 * KIB),
                  "fma_chunks": (9, 2, 512),
                  "add_blocks": (9, 2, 512)}
        for name, (count, lo, hi) in expect.items():
            sizes = getattr(self, name)
            if len(sizes) != count:
                raise ValueError(f"{name} must have {count} points")
            if sizes[0] != lo or sizes[-1] != hi:
                raise ValueError(f"{name} must span [{lo}, {hi}]")
            if any(b <= a for a, b in zip(sizes, sizes[1:])):
                raise ValueError(f"{name} must be strictly increasing")


def _interp_table(sizes, lo_val, hi_val) -> list[tuple[int, float]]:
    # log-linear ramp between the endpoint values
    lo_s, hi_s = sizes[0], sizes[-1]
    out = []
    for s in sizes:
        t = (math.log2(s) - math.log2(lo_s)) / (math.log2(hi_s) - math.log2(lo_s))
        out.append((s, lo_val + t * (hi_val - lo_val)))
    return out


def default_profile(grid: CalibrationGrid | None = None) -> CostProfile:
    """A plausible profile for the modeled machine.

    Transfer bandwidths ramp up with payload size (small transfers pay fixed
    launch overheads); the per-core FMA rate is an integer multiply-add
    stream through the scratchpad, so the chunk-row rate falls roughly as
    1/chunk with a short-chunk penalty.
    """
    grid = grid or CalibrationGrid()
    elems_per_s = 11.0e6  # one core's element multiply-accumulate rate
    fma = []
    for chunk in grid.fma_chunks:
        efficiency = 0.55 + 0.45 * min(1.0, math.log2(chunk) / 7.0)
        fma.append((chunk, efficiency * elems_per_s / chunk))
    add = []
    for block in grid.add_blocks:
        efficiency = 0.4 + 0.6 * min(1.0, math.log2(block) / 7.0)
        add.append((block, efficiency * 2.0e9))
    return CostProfile(
        host_pim_bw=_interp_table(grid.host_pim_sizes, 2.2, 7.0),
        pim_host_bw=_interp_table(grid.pim_host_sizes, 1.4, 4.7),
        host_bw=_interp_table(grid.host_bw_sizes, 1.0, 20.0),
        fma_core_throughput=fma,
        add_host_throughput=add,
    )
