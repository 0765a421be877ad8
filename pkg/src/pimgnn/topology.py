"""Static shape of the modeled near-bank PIM machine.

A machine is a set of PIM devices; each device holds a fixed number of cores,
each core is coupled to one DRAM bank plus a small scratchpad and runs up to
24 threads.  Cores are grouped into clusters for planning purposes; all cores
of a cluster live on one device, so parallel Host/PIM transfers pad at device
granularity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

MAX_THREADS_PER_CORE = 24
VALID_TRANSFER_CHUNKS = (128, 256)
VALID_CLUSTERS_PER_DEVICE = (1, 2, 4)


@dataclass(frozen=True)
class PimTopology:
    n_devices: int = 32
    clusters_per_device: int = 1
    cores_per_cluster: int = 64
    threads_per_core: int = 16
    bank_capacity: int = 64 * 2**20       # bytes of DRAM per core
    scratchpad_capacity: int = 64 * 2**10  # bytes of scratchpad per core
    transfer_chunk: int = 256              # coarse-grained fetch size, bytes
    pipeline_saturation_threads: int = 16

    def __post_init__(self):
        for name in ("n_devices", "clusters_per_device", "cores_per_cluster",
                     "threads_per_core", "pipeline_saturation_threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.threads_per_core > MAX_THREADS_PER_CORE:
            raise ValueError(f"threads_per_core > {MAX_THREADS_PER_CORE}")
        if self.transfer_chunk not in VALID_TRANSFER_CHUNKS:
            raise ValueError(f"transfer_chunk must be one of {VALID_TRANSFER_CHUNKS}")
        if self.bank_capacity < 0 or self.scratchpad_capacity < 0:
            raise ValueError("capacities must be non-negative")

    @property
    def cores_per_device(self) -> int:
        return self.clusters_per_device * self.cores_per_cluster

    @property
    def total_clusters(self) -> int:
        return self.n_devices * self.clusters_per_device

    @property
    def total_cores(self) -> int:
        return self.n_devices * self.cores_per_device

    def with_clusters_per_device(self, grp: int) -> "PimTopology":
        """Re-group this machine's cores into ``grp`` clusters per device."""
        if grp not in VALID_CLUSTERS_PER_DEVICE:
            raise ValueError(f"clusters per device must be one of {VALID_CLUSTERS_PER_DEVICE}")
        if self.cores_per_device % grp:
            raise ValueError(
                f"{self.cores_per_device} cores per device not divisible into {grp} clusters")
        return replace(self, clusters_per_device=grp,
                       cores_per_cluster=self.cores_per_device // grp)

    def device_of_cluster(self, cluster: int) -> int:
        return cluster // self.clusters_per_device
