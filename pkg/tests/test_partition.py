import numpy as np
import pytest

from pimgnn import (
    Balance, CapacityError, CoreScheme, Format, PafConfig, PimTopology,
    PlanError, SyncMode, ValueKind, assign_within_cluster, assign_within_core,
    build_tile_plan, check_full_replica_capacity, concrete_scheme, from_entries,
    plan_tiles, slice_sparse, split_even, validate_capacity,
)
from pimgnn.partition import split_nnz_even, split_rows_by_nnz, split_rows_even
from pimgnn.synthetic import random_sparse

TOPO4 = PimTopology(n_devices=2, clusters_per_device=1, cores_per_cluster=2,
                    threads_per_core=4)


def row_nnz_matrix(nnz_per_row, n_cols=None):
    """Matrix with the given per-row non-zero counts (columns packed left)."""
    n_cols = n_cols or max(max(nnz_per_row), 1)
    entries = [(i, j, 1) for i, d in enumerate(nnz_per_row) for j in range(d)]
    return from_entries(len(nnz_per_row), n_cols, entries, ValueKind.INT32)


class TestSplitEven:
    def test_remainder_leads(self):
        assert split_even(7, 2) == [(0, 4), (4, 7)]

    def test_exact(self):
        assert split_even(8, 4) == [(0, 2), (2, 4), (4, 6), (6, 8)]

    def test_more_parts_than_items(self):
        assert split_even(2, 4) == [(0, 1), (1, 2), (2, 2), (2, 2)]


class TestPlanTiles:
    def test_four_cluster_example(self):
        # 2 sparse x 2 dense partitions on a 4-cluster machine: clusters 0,1
        # share slice 0; clusters 2,3 share slice 1.
        cfg = PafConfig(sp=2, dp=2, grp=2, format=Format.CSR)
        topo = PimTopology(n_devices=2, clusters_per_device=1,
                           cores_per_cluster=2, threads_per_core=2)
        geo = plan_tiles(8, 4, cfg, topo)
        assert geo.col_ranges == ((0, 4), (4, 8))
        assert geo.tile_col_ranges == ((0, 2), (2, 4))
        assert geo.tile_of_cluster(0) == (0, 0)
        assert geo.tile_of_cluster(1) == (0, 1)
        assert geo.tile_of_cluster(2) == (1, 0)
        assert geo.tile_of_cluster(3) == (1, 1)

    def test_single_tile(self):
        cfg = PafConfig(sp=1, dp=1, grp=1)
        topo = PimTopology(n_devices=1, clusters_per_device=1,
                           cores_per_cluster=4, threads_per_core=2)
        geo = plan_tiles(8, 4, cfg, topo)
        assert geo.col_ranges == ((0, 8),)
        assert geo.tile_col_ranges == ((0, 4),)

    def test_uneven_columns(self):
        cfg = PafConfig(sp=2, dp=2, grp=2)
        topo = PimTopology(n_devices=2, clusters_per_device=1,
                           cores_per_cluster=2, threads_per_core=2)
        geo = plan_tiles(7, 4, cfg, topo)
        assert geo.col_ranges == ((0, 4), (4, 7))

    def test_geometry_violation(self):
        cfg = PafConfig(sp=3, dp=1, grp=1)
        with pytest.raises(PlanError, match="must equal"):
            plan_tiles(8, 4, cfg, TOPO4)

    def test_sp_exceeds_rows(self):
        cfg = PafConfig(sp=2, dp=1, grp=1)
        with pytest.raises(PlanError, match="exceeds matrix dimension"):
            plan_tiles(1, 4, cfg, TOPO4)

    def test_dp_exceeds_hidden(self):
        cfg = PafConfig(sp=1, dp=2, grp=1)
        with pytest.raises(PlanError, match="exceeds hidden"):
            plan_tiles(8, 1, cfg, TOPO4)


class TestSliceSparse:
    def test_membership_and_rebase(self):
        a = from_entries(2, 8, [(0, 0, 1), (0, 1, 2), (1, 5, 3)], ValueKind.INT32)
        s0, s1 = slice_sparse(a, [(0, 4), (4, 8)])
        assert list(zip(s0.rowind, s0.colind)) == [(0, 0), (0, 1)]
        assert list(zip(s1.rowind, s1.colind)) == [(1, 1)]

    def test_identity_slice(self):
        a = random_sparse(10, 10, 0.2, seed=0)
        (s,) = slice_sparse(a, [(0, 10)])
        assert np.array_equal(s.to_dense(), a.to_dense())

    def test_dense_concatenation_oracle(self):
        a = random_sparse(32, 32, 0.1, seed=5)
        ranges = split_even(32, 3)
        slices = slice_sparse(a, ranges)
        rebuilt = np.concatenate([s.to_dense() for s in slices], axis=1)
        assert np.array_equal(rebuilt, a.to_dense())

    def test_bad_ranges(self):
        a = random_sparse(8, 8, 0.2, seed=1)
        with pytest.raises(PlanError):
            slice_sparse(a, [(0, 4), (5, 8)])

    def test_csr_keeps_empty_rows(self):
        a = from_entries(4, 4, [(1, 3, 1)], ValueKind.INT32, fmt=Format.CSR)
        s0, s1 = slice_sparse(a, [(0, 2), (2, 4)])
        assert s1.n_rows == 4
        assert list(s1.rowptr) == [0, 0, 1, 1, 1]


class TestWithinCluster:
    def test_rv_ceil_split(self):
        m = row_nnz_matrix([1, 1, 1, 1, 1]).to_csr()
        spans = assign_within_cluster(m, 2, CoreScheme.RV)
        assert [(s.row_start, s.row_end) for s in spans] == [(0, 3), (3, 5)]

    def test_re_greedy_frozen(self):
        # nnz per row [4,1,1,1,1], 2 cores: core0 takes row 0 (4 nnz),
        # core1 rows 1..4 (4 nnz)
        m = row_nnz_matrix([4, 1, 1, 1, 1]).to_csr()
        spans = assign_within_cluster(m, 2, CoreScheme.RE)
        assert [(s.row_start, s.row_end, s.nnz) for s in spans] == \
            [(0, 1, 4), (1, 5, 4)]

    def test_cp_frozen(self):
        # nnz per row [5,1], 2 cores: 3 nnz of row 0 / 2 nnz of row 0 + row 1
        m = row_nnz_matrix([5, 1])
        spans = assign_within_cluster(m, 2, CoreScheme.CP)
        s0, s1 = spans
        assert (s0.nnz, s0.row_start, s0.row_end) == (3, 0, 1)
        assert (s1.nnz, s1.row_start, s1.row_end) == (3, 0, 2)
        assert s0.split_tail and s1.split_head

    def test_ce_matches_re_rule(self):
        m = row_nnz_matrix([4, 1, 1, 1, 1])
        spans = assign_within_cluster(m, 2, CoreScheme.CE)
        assert [(s.row_start, s.row_end, s.nnz) for s in spans] == \
            [(0, 1, 4), (1, 5, 4)]

    def test_scheme_format_mismatch(self):
        coo = row_nnz_matrix([2, 2])
        csr = coo.to_csr()
        with pytest.raises(ValueError):
            assign_within_cluster(coo, 2, CoreScheme.RV)
        with pytest.raises(ValueError):
            assign_within_cluster(csr, 2, CoreScheme.CP)

    def test_concrete_scheme_mapping(self):
        assert concrete_scheme(Format.CSR, Balance.VERTEX) is CoreScheme.RV
        assert concrete_scheme(Format.CSR, Balance.EDGE) is CoreScheme.RE
        assert concrete_scheme(Format.COO, Balance.VERTEX) is CoreScheme.CE
        assert concrete_scheme(Format.COO, Balance.EDGE) is CoreScheme.CP


class TestWithinCore:
    def test_rv_one_row_each(self):
        m = row_nnz_matrix([1] * 16).to_csr()
        (core,) = assign_within_cluster(m, 1, CoreScheme.RV)
        tas, bounds, lock, slots = assign_within_core(
            m, core, 16, CoreScheme.RV, SyncMode.LOCK_FREE)
        assert [t.span.n_rows for t in tas] == [1] * 16
        assert bounds == lock == slots == 0

    def test_cp_lockfree_slots(self):
        # 4 threads over 8 nnz in 2 rows of 4: boundaries where rows split
        m = row_nnz_matrix([4, 4])
        (core,) = assign_within_cluster(m, 1, CoreScheme.CE)
        tas, bounds, lock, slots = assign_within_core(
            m, core, 4, CoreScheme.CP, SyncMode.LOCK_FREE)
        assert slots == bounds
        assert lock == 0
        total = sum(t.span.nnz for t in tas)
        assert total == 8

    def test_cp_three_boundaries(self):
        # one long row split across 4 threads: 3 boundaries, 3 slots
        m = row_nnz_matrix([12])
        (core,) = assign_within_cluster(m, 1, CoreScheme.CE)
        tas, bounds, lock, slots = assign_within_core(
            m, core, 4, CoreScheme.CP, SyncMode.LOCK_FREE)
        assert bounds == 3 and slots == 3

    def test_coarse_lock_write_count(self):
        # one row split across 4 threads: 4 owners commit under the mutex
        m = row_nnz_matrix([12])
        (core,) = assign_within_cluster(m, 1, CoreScheme.CE)
        _, bounds, lock, slots = assign_within_core(
            m, core, 4, CoreScheme.CP, SyncMode.COARSE_LOCK)
        assert lock == 4 and slots == 0

    def test_thread_limit(self):
        m = row_nnz_matrix([4])
        (core,) = assign_within_cluster(m, 1, CoreScheme.CE)
        with pytest.raises(PlanError, match=r"\[1, 24\]"):
            assign_within_core(m, core, 25, CoreScheme.CP, SyncMode.LOCK_FREE)


class TestBalanceBounds:
    def test_re_ce_spread_bounded_by_max_row(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(2, 40))
            cores = int(rng.integers(1, 9))
            nnz_per_row = rng.integers(0, 30, size=n).tolist()
            if sum(nnz_per_row) == 0:
                nnz_per_row[0] = 1
            m = row_nnz_matrix(nnz_per_row)
            spans = assign_within_cluster(m, cores, CoreScheme.CE)
            loads = [s.nnz for s in spans]
            assert max(loads) - min(loads) <= max(nnz_per_row), \
                (trial, nnz_per_row, cores, loads)

    def test_cp_spread_at_most_one(self):
        rng = np.random.default_rng(43)
        for trial in range(50):
            n = int(rng.integers(1, 30))
            cores = int(rng.integers(1, 9))
            nnz_per_row = rng.integers(0, 20, size=n).tolist()
            m = row_nnz_matrix(nnz_per_row)
            spans = assign_within_cluster(m, cores, CoreScheme.CP)
            loads = [s.nnz for s in spans]
            assert max(loads) - min(loads) <= 1

    def test_rv_row_spread_at_most_one(self):
        rng = np.random.default_rng(44)
        for trial in range(50):
            n = int(rng.integers(1, 50))
            cores = int(rng.integers(1, 9))
            m = row_nnz_matrix(rng.integers(0, 5, size=n).tolist()).to_csr()
            spans = assign_within_cluster(m, cores, CoreScheme.RV)
            rows = [s.n_rows for s in spans]
            assert max(rows) - min(rows) <= 1

    def test_partition_exactness(self):
        rng = np.random.default_rng(45)
        for scheme in (CoreScheme.RE, CoreScheme.CE, CoreScheme.CP, CoreScheme.RV):
            for trial in range(25):
                n = int(rng.integers(1, 40))
                cores = int(rng.integers(1, 7))
                m = row_nnz_matrix(rng.integers(0, 12, size=n).tolist())
                m = m.to_csr() if scheme in (CoreScheme.RV, CoreScheme.RE) else m
                spans = assign_within_cluster(m, cores, scheme)
                assert sum(s.nnz for s in spans) == m.nnz
                # contiguous non-overlapping nnz coverage
                pos = 0
                for s in spans:
                    assert s.nnz_start == pos
                    pos = s.nnz_end
                assert pos == m.nnz


class TestPlanAndCapacity:
    def test_plan_deterministic(self):
        a = random_sparse(40, 40, 0.1, seed=9)
        cfg = PafConfig(sp=2, dp=1, grp=1, format=Format.COO,
                        cluster_scheme=Balance.EDGE, core_scheme=Balance.EDGE)
        p1 = build_tile_plan(a, 8, cfg, TOPO4)
        p2 = build_tile_plan(a, 8, cfg, TOPO4)
        assert p1.to_json_str() == p2.to_json_str()

    def test_plan_nnz_partition(self):
        a = random_sparse(50, 50, 0.08, seed=10)
        cfg = PafConfig(sp=2, dp=2, grp=2, format=Format.CSR)
        topo = PimTopology(n_devices=2, clusters_per_device=1,
                           cores_per_cluster=4, threads_per_core=4)
        plan = build_tile_plan(a, 8, cfg, topo)
        # every slice's nnz is exactly covered by its cores, per cluster
        for cl in plan.clusters:
            assert sum(c.span.nnz for c in cl.cores) == cl.slice_nnz
        # slices tile the whole matrix
        assert sum(s.nnz for s in plan.slices) == a.nnz

    def test_full_replica_boundary(self):
        topo = PimTopology(bank_capacity=64 * 2**20)
        # 64K vertices x 256 hidden x int32 is exactly 64 MiB: fits
        check_full_replica_capacity(65536, 256, 4, topo)
        with pytest.raises(CapacityError):
            check_full_replica_capacity(65537, 256, 4, topo)

    def test_small_plan_fits(self):
        a = random_sparse(1024, 1024, 0.01, seed=2)
        cfg = PafConfig(sp=2, dp=1, grp=1, format=Format.CSR)
        plan = build_tile_plan(a, 64, cfg, TOPO4)
        validate_capacity(plan)  # no raise

    def test_zero_bank_capacity(self):
        a = random_sparse(16, 16, 0.1, seed=2)
        topo = PimTopology(n_devices=2, clusters_per_device=1,
                           cores_per_cluster=2, threads_per_core=2,
                           bank_capacity=0)
        cfg = PafConfig(sp=2, dp=1, grp=1, format=Format.CSR)
        plan = build_tile_plan(a, 4, cfg, topo)
        with pytest.raises(CapacityError) as exc:
            validate_capacity(plan)
        assert "bank capacity" in str(exc.value)
        assert exc.value.breakdown["total_bytes"] > 0

    def test_scratchpad_overflow(self):
        a = random_sparse(64, 64, 0.1, seed=3)
        topo = PimTopology(n_devices=1, clusters_per_device=1,
                           cores_per_cluster=2, threads_per_core=16,
                           scratchpad_capacity=1024)
        cfg = PafConfig(sp=1, dp=1, grp=1, format=Format.CSR)
        with pytest.raises(CapacityError, match="scratchpad"):
            build_tile_plan(a, 64, cfg, topo)

    def test_plan_json_shape(self):
        a = random_sparse(20, 20, 0.15, seed=4)
        cfg = PafConfig(sp=2, dp=1, grp=1, format=Format.COO,
                        core_scheme=Balance.EDGE)
        plan = build_tile_plan(a, 4, cfg, TOPO4)
        doc = plan.to_json()
        assert doc["schema_version"] == 1
        assert len(doc["clusters"]) == 2
        assert len(doc["device_padded_to_bytes"]) == 2
        core = doc["clusters"][0]["cores"][0]
        assert {"rows", "nnz", "threads", "bytes_to", "bytes_from"} <= set(core)
