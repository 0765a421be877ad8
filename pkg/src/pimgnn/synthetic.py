"""Deterministic synthetic graphs so the suite runs with no downloads."""

from __future__ import annotations

import numpy as np

from .matrices import Format, SparseMatrix, ValueKind


def power_law_graph(n: int, avg_degree: float = 8.0, exponent: float = 2.1,
                    seed: int = 0, value_kind: ValueKind = ValueKind.INT32
                    ) -> SparseMatrix:
    """Random graph with a power-law row-degree profile (a few rows carry far
    more edges than the average).  Entries have value 1; no self loops."""
    rng = np.random.default_rng(seed)
    raw = rng.zipf(exponent, size=n).astype(np.float64)
    raw = np.minimum(raw, max(2, n // 4))
    degrees = np.maximum(1, np.rint(raw * (avg_degree / raw.mean()))).astype(np.int64)
    degrees = np.minimum(degrees, n - 1)
    rows = []
    cols = []
    for i in range(n):
        targets = rng.choice(n, size=int(degrees[i]), replace=False)
        targets = targets[targets != i]
        rows.append(np.full(len(targets), i, np.int64))
        cols.append(np.sort(targets).astype(np.int64))
    rowind = np.concatenate(rows) if rows else np.empty(0, np.int64)
    colind = np.concatenate(cols) if cols else np.empty(0, np.int64)
    values = np.ones(len(rowind), value_kind.dtype)
    return SparseMatrix(n, n, Format.COO, value_kind,
                        rowind=rowind, colind=colind, values=values)


def random_sparse(n_rows: int, n_cols: int, density: float, seed: int = 0,
                  value_kind: ValueKind = ValueKind.INT32,
                  value_range: tuple[int, int] = (-4, 5)) -> SparseMatrix:
    """Uniformly random sparse matrix with small integer (or unit float)
    values; used by the randomized test sweeps."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_rows, n_cols)) < density
    r, c = np.nonzero(mask)
    if value_kind.is_integer:
        v = rng.integers(value_range[0], value_range[1], size=len(r))
        v = np.where(v == 0, 1, v)
    else:
        v = rng.standard_normal(len(r))
    return SparseMatrix(n_rows, n_cols, Format.COO, value_kind,
                        rowind=r.astype(np.int64), colind=c.astype(np.int64),
                        values=v.astype(value_kind.dtype))


def random_dense(n_rows: int, n_cols: int, seed: int = 0,
                 value_kind: ValueKind = ValueKind.INT32,
                 value_range: tuple[int, int] = (-3, 4)):
    """Small-valued dense matrix for feature/weight fixtures."""
    from .matrices import DenseMatrix

    rng = np.random.default_rng(seed)
    if value_kind.is_integer:
        v = rng.integers(value_range[0], value_range[1], size=(n_rows, n_cols))
    else:
        v = rng.standard_normal((n_rows, n_cols))
    return DenseMatrix(n_rows, n_cols, v.astype(value_kind.dtype), value_kind)
