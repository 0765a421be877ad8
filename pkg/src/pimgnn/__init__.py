"""GNN aggregation on a modeled near-bank PIM machine.

The library plans sparse aggregation across a device/cluster/core/thread
hierarchy, simulates it with exact numerics and a calibrated cost breakdown,
auto-tunes the configuration, and runs cooperative multi-layer GNN inference.
"""

from .costmodel import (
    CalibrationGrid, CostProfile, closest_lookup, default_profile,
)
from .matrices import (
    DEFAULT_WEIGHT_SCALE, DegreeStats, DenseMatrix, Format, GnnKind,
    MatrixMarketError, SparseMatrix, ValueKind, coo_to_csr, csr_to_coo,
    degree_stats, dense_spmm_oracle, from_entries, load_matrix_market,
    normalize_adjacency,
)
from .partition import (
    Balance, CapacityError, CoreScheme, PafConfig, PlanError, SyncMode,
    TileGeometry, TilePlan, assign_within_cluster, assign_within_core,
    build_tile_plan, check_full_replica_capacity, concrete_scheme, plan_tiles,
    slice_sparse, split_even, validate_capacity,
)
from .runtime import (
    Activation, GnnModel, InferenceReport, Layer, host_gemm,
    reference_inference, run_inference, run_layer,
)
from .simulator import (
    BaselineKind, ClusterReport, CoreReport, ExecutionReport,
    host_pim_transfer, kernel_time, merge, pim_host_transfer,
    resource_utilization, simulate_aggregation, simulate_baseline,
)
from .synthetic import power_law_graph, random_dense, random_sparse
from .tensorio import load_tensor, save_tensor
from .topology import MAX_THREADS_PER_CORE, PimTopology
from .tuner import (
    AggregationStats, Candidate, NoValidConfiguration, TuneResult,
    TunerEstimate, calibrate, divisors, predict_time, tune,
)

__version__ = "0.1.0"
