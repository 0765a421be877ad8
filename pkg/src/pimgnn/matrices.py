"""Sparse and dense matrix data model.

Adjacency matrices are held in CSR or COO with explicit index arrays, the
feature/weight matrices as contiguous row-major dense arrays.  Everything is
immutable after construction and safe to share across threads.  The module
also provides Matrix Market ingestion, per-model adjacency normalization, a
dense reference product used as the correctness oracle throughout the test
suite, and per-row degree statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Format(str, Enum):
    CSR = "csr"
    COO = "coo"


class ValueKind(str, Enum):
    INT8 = "int8"
    INT16 = "int16"
    INT32 = "int32"
    FLOAT32 = "float32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @property
    def nbytes(self) -> int:
        return self.dtype.itemsize

    @property
    def is_integer(self) -> bool:
        return self is not ValueKind.FLOAT32

    @property
    def accumulator(self) -> np.dtype:
        # Wide accumulation: wrap-free for integers, extra precision for floats.
        return np.dtype(np.int64) if self.is_integer else np.dtype(np.float64)

    def narrow(self, acc: np.ndarray) -> np.ndarray:
        """Narrow a wide accumulator array to this kind, refusing overflow."""
        if self.is_integer:
            info = np.iinfo(self.dtype)
            if acc.size and (acc.max() > info.max or acc.min() < info.min):
                raise OverflowError(
                    f"accumulated value outside {self.value} range "
                    f"[{info.min}, {info.max}]"
                )
        return np.ascontiguousarray(acc.astype(self.dtype))


class GnnKind(str, Enum):
    GCN = "gcn"
    GIN = "gin"
    SAGE = "sage"


DEFAULT_WEIGHT_SCALE = 256  # fixed-point scale for normalized weights, integer kinds


@dataclass(frozen=True)
class SparseMatrix:
    """A sparse matrix in CSR or COO.

    CSR uses (rowptr, colind, values); COO uses (rowind, colind, values) with
    entries sorted by (row, col).  Index arrays are int64 in memory; the
    planner accounts device-side indices at 4 bytes each.
    """

    n_rows: int
    n_cols: int
    format: Format
    value_kind: ValueKind
    rowptr: np.ndarray | None = None
    rowind: np.ndarray | None = None
    colind: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "colind", np.ascontiguousarray(self.colind, np.int64))
        object.__setattr__(
            self, "values", np.ascontiguousarray(self.values, self.value_kind.dtype)
        )
        if self.format is Format.CSR:
            if self.rowptr is None:
                raise ValueError("CSR matrix requires rowptr")
            object.__setattr__(self, "rowptr", np.ascontiguousarray(self.rowptr, np.int64))
            self._check_csr()
        else:
            if self.rowind is None:
                raise ValueError("COO matrix requires rowind")
            object.__setattr__(self, "rowind", np.ascontiguousarray(self.rowind, np.int64))
            self._check_coo()

    def _check_csr(self):
        p = self.rowptr
        if len(p) != self.n_rows + 1 or p[0] != 0 or p[-1] != len(self.colind):
            raise ValueError("malformed CSR rowptr")
        if np.any(np.diff(p) < 0):
            raise ValueError("CSR rowptr must be non-decreasing")
        if len(self.colind) != len(self.values):
            raise ValueError("colind/values length mismatch")
        if len(self.colind) and (self.colind.min() < 0 or self.colind.max() >= self.n_cols):
            raise ValueError("CSR column index out of range")

    def _check_coo(self):
        if not (len(self.rowind) == len(self.colind) == len(self.values)):
            raise ValueError("COO array length mismatch")
        if len(self.rowind):
            if self.rowind.min() < 0 or self.rowind.max() >= self.n_rows:
                raise ValueError("COO row index out of range")
            if self.colind.min() < 0 or self.colind.max() >= self.n_cols:
                raise ValueError("COO column index out of range")
            key = self.rowind * self.n_cols + self.colind
            if np.any(np.diff(key) < 0):
                raise ValueError("COO entries must be sorted by (row, col)")

    @property
    def nnz(self) -> int:
        return len(self.colind)

    def row_nnz(self) -> np.ndarray:
        """Non-zero count per row, length n_rows."""
        if self.format is Format.CSR:
            return np.diff(self.rowptr)
        return np.bincount(self.rowind, minlength=self.n_rows).astype(np.int64)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        if self.format is Format.COO:
            return self.rowind
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.rowptr))

    def to_coo(self) -> "SparseMatrix":
        if self.format is Format.COO:
            return self
        return SparseMatrix(
            self.n_rows, self.n_cols, Format.COO, self.value_kind,
            rowind=self.row_indices(), colind=self.colind, values=self.values,
        )

    def to_csr(self) -> "SparseMatrix":
        if self.format is Format.CSR:
            return self
        return coo_to_csr(self)

    def with_format(self, fmt: Format) -> "SparseMatrix":
        return self.to_csr() if fmt is Format.CSR else self.to_coo()

    def to_dense(self, dtype=None) -> np.ndarray:
        """Dense expansion (duplicate-free input assumed)."""
        out = np.zeros((self.n_rows, self.n_cols), dtype or self.value_kind.dtype)
        out[self.row_indices(), self.colind] = self.values
        return out


@dataclass(frozen=True)
class DenseMatrix:
    """Row-major dense matrix with an explicit value kind."""

    n_rows: int
    n_cols: int
    values: np.ndarray
    value_kind: ValueKind

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, self.value_kind.dtype)
        if v.shape != (self.n_rows, self.n_cols):
            raise ValueError(
                f"dense values shape {v.shape} != ({self.n_rows}, {self.n_cols})"
            )
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, arr, value_kind: ValueKind) -> "DenseMatrix":
        a = np.asarray(arr)
        return cls(a.shape[0], a.shape[1], a.astype(value_kind.dtype), value_kind)

    @property
    def nbytes(self) -> int:
        return self.n_rows * self.n_cols * self.value_kind.nbytes


@dataclass(frozen=True)
class DegreeStats:
    min_nnz: int
    max_nnz: int
    avg_nnz: float
    std_nnz: float


class MatrixMarketError(ValueError):
    """Raised for malformed Matrix Market input; messages carry line numbers."""


def _mm_fail(lineno: int, msg: str):
    raise MatrixMarketError(f"line {lineno}: {msg}")


def load_matrix_market(path, value_kind: ValueKind = ValueKind.FLOAT32) -> SparseMatrix:
    """Parse a Matrix Market coordinate file into a COO matrix.

    Accepts ``general`` and ``symmetric`` qualifiers and ``real``, ``integer``
    or ``pattern`` fields.  Indices are 1-based in the file; symmetric files
    are expanded to both triangles; duplicate entries are summed (values of a
    `pattern` file are taken as 1).
    """
    rows, cols, vals = [], [], []
    n_rows = n_cols = declared_nnz = None
    file_entries = 0
    symmetric = False
    pattern = False
    with open(path, "r") as fh:
        lines = fh.readlines()
    lineno = 0
    header = lines[0].strip().lower() if lines else ""
    lineno = 1
    tokens = header.split()
    if len(tokens) < 4 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        _mm_fail(1, "expected '%%MatrixMarket matrix coordinate ...' header")
    if tokens[2] != "coordinate":
        _mm_fail(1, f"unsupported format '{tokens[2]}' (only coordinate)")
    fld = tokens[3]
    if fld not in ("real", "integer", "pattern"):
        _mm_fail(1, f"unsupported field '{fld}'")
    pattern = fld == "pattern"
    sym = tokens[4] if len(tokens) > 4 else "general"
    if sym not in ("general", "symmetric"):
        _mm_fail(1, f"unsupported symmetry '{sym}'")
    symmetric = sym == "symmetric"

    for raw in lines[1:]:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if n_rows is None:
            if len(parts) != 3:
                _mm_fail(lineno, "size line must be 'rows cols nnz'")
            try:
                n_rows, n_cols, declared_nnz = (int(p) for p in parts)
            except ValueError:
                _mm_fail(lineno, "non-integer size line")
            if n_rows < 0 or n_cols < 0 or declared_nnz < 0:
                _mm_fail(lineno, "negative size")
            continue
        want = 2 if pattern else 3
        if len(parts) < want:
            _mm_fail(lineno, f"entry needs {want} fields, got {len(parts)}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            _mm_fail(lineno, "non-integer index")
        try:
            v = 1.0 if pattern else float(parts[2])
        except ValueError:
            _mm_fail(lineno, f"non-numeric value '{parts[2]}'")
        if not (1 <= i <= n_rows) or not (1 <= j <= n_cols):
            _mm_fail(lineno, f"index ({i}, {j}) outside 1..{n_rows} x 1..{n_cols}")
        file_entries += 1
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if symmetric and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(v)
    if n_rows is None:
        _mm_fail(lineno or 1, "missing size line")
    if file_entries != declared_nnz:
        _mm_fail(lineno, f"header declares {declared_nnz} entries, file has {file_entries}")
    r = np.asarray(rows, np.int64)
    c = np.asarray(cols, np.int64)
    v = np.asarray(vals, np.float64)
    r, c, v = _sum_duplicates(r, c, v, n_rows, n_cols)
    if value_kind.is_integer:
        v = np.rint(v)
    return SparseMatrix(n_rows, n_cols, Format.COO, value_kind,
                        rowind=r, colind=c, values=v.astype(value_kind.dtype))


def _sum_duplicates(r, c, v, n_rows, n_cols):
    if len(r) == 0:
        return r, c, v
    key = r * n_cols + c
    order = np.argsort(key, kind="stable")
    key, r, c, v = key[order], r[order], c[order], v[order]
    uniq, start = np.unique(key, return_index=True)
    summed = np.add.reduceat(v, start)
    return r[start], c[start], summed


def coo_to_csr(m: SparseMatrix) -> SparseMatrix:
    """Convert a (row, col)-sorted COO matrix to CSR."""
    if m.format is not Format.COO:
        raise ValueError("coo_to_csr expects a COO matrix")
    counts = np.bincount(m.rowind, minlength=m.n_rows)
    rowptr = np.zeros(m.n_rows + 1, np.int64)
    np.cumsum(counts, out=rowptr[1:])
    return SparseMatrix(m.n_rows, m.n_cols, Format.CSR, m.value_kind,
                        rowptr=rowptr, colind=m.colind, values=m.values)


def csr_to_coo(m: SparseMatrix) -> SparseMatrix:
    if m.format is not Format.CSR:
        raise ValueError("csr_to_coo expects a CSR matrix")
    return m.to_coo()


def from_entries(n_rows, n_cols, entries, value_kind=ValueKind.FLOAT32,
                 fmt=Format.COO) -> SparseMatrix:
    """Build a matrix from an iterable of (row, col, value) triples."""
    if entries:
        r, c, v = (np.asarray(x) for x in zip(*entries))
    else:
        r = c = np.empty(0, np.int64)
        v = np.empty(0)
    r = r.astype(np.int64)
    c = c.astype(np.int64)
    v = v.astype(np.float64)
    r, c, v = _sum_duplicates(r, c, v, n_rows, n_cols)
    m = SparseMatrix(n_rows, n_cols, Format.COO, value_kind,
                     rowind=r, colind=c, values=v.astype(value_kind.dtype))
    return m.with_format(fmt)


def normalize_adjacency(m: SparseMatrix, model: GnnKind, eps: float = 0.0,
                        weight_scale: int = DEFAULT_WEIGHT_SCALE) -> SparseMatrix:
    """Normalize a square adjacency matrix for one of the supported models.

    GCN replaces values on A+I by 1/sqrt((d_i+1)(d_j+1)) with d the row
    degree of the input; SAGE replaces values by the row mean weight 1/d_i;
    GIN keeps the input values and adds (1+eps) on the diagonal.  For integer
    value kinds the GCN/SAGE weights are fixed-point scaled by
    ``weight_scale`` (the oracle and the simulator share the scale, so
    integer equivalence stays exact); GIN's diagonal term is rounded.
    """
    if m.n_rows != m.n_cols:
        raise ValueError("normalize_adjacency requires a square matrix")
    n = m.n_rows
    coo = m.to_coo()
    deg = coo.row_nnz().astype(np.float64)

    if model is GnnKind.SAGE:
        with np.errstate(divide="ignore"):
            w = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
        vals = w[coo.rowind]
        rows, cols = coo.rowind, coo.colind
    elif model is GnnKind.GCN:
        diag = np.arange(n, dtype=np.int64)
        rows = np.concatenate([coo.rowind, diag])
        cols = np.concatenate([coo.colind, diag])
        rows, cols, _ = _sum_duplicates(rows, cols, np.ones(len(rows)), n, n)
        inv = 1.0 / np.sqrt(deg + 1.0)
        vals = inv[rows] * inv[cols]
    elif model is GnnKind.GIN:
        diag = np.arange(n, dtype=np.int64)
        rows = np.concatenate([coo.rowind, diag])
        cols = np.concatenate([coo.colind, diag])
        self_term = 1.0 + eps
        vals = np.concatenate([coo.values.astype(np.float64),
                               np.full(n, self_term)])
        rows, cols, vals = _sum_duplicates(rows, cols, vals, n, n)
    else:
        raise ValueError(f"unknown model {model}")

    if m.value_kind.is_integer:
        if model is GnnKind.GIN:
            out_vals = np.rint(vals)
        else:
            out_vals = np.rint(vals * weight_scale)
    else:
        out_vals = vals
    result = SparseMatrix(n, n, Format.COO, m.value_kind, rowind=rows,
                          colind=cols, values=out_vals.astype(m.value_kind.dtype))
    return result.with_format(m.format)


def dense_spmm_oracle(a: SparseMatrix, f: DenseMatrix) -> DenseMatrix:
    """Reference sparse x dense product.

    Expands ``a`` densely and multiplies in a wide accumulator, then narrows
    with an overflow check.  Deliberately independent of the simulator's
    per-core execution path.
    """
    if a.n_cols != f.n_rows:
        raise ValueError(f"dimension mismatch: a is {a.n_rows}x{a.n_cols}, "
                         f"f is {f.n_rows}x{f.n_cols}")
    acc_t = f.value_kind.accumulator
    acc = a.to_dense(acc_t) @ f.values.astype(acc_t)
    return DenseMatrix(a.n_rows, f.n_cols, f.value_kind.narrow(acc), f.value_kind)


def degree_stats(m: SparseMatrix) -> DegreeStats:
    """Min/max/mean/population-std of per-row non-zero counts."""
    if m.n_rows == 0:
        return DegreeStats(0, 0, 0.0, 0.0)
    nnz = m.row_nnz()
    return DegreeStats(
        min_nnz=int(nnz.min()),
        max_nnz=int(nnz.max()),
        avg_nnz=float(nnz.mean()),
        std_nnz=float(nnz.std()),
    )
