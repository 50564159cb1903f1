"""Matrix Market coordinate-format ingestion.

Supports the coordinate format with real/integer/pattern fields and
general/symmetric storage.  Symmetric files expand off-diagonal entries to
both triangles (diagonals are never duplicated); pattern entries get value
1.0.  Values parse as 64-bit floats with exponent forms, independent of
locale.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .workloads import CsrMatrix


class MtxError(ValueError):
    pass


class HeaderError(MtxError):
    """Missing or malformed %%MatrixMarket header."""


class DimensionError(MtxError):
    """Entry count or dimension line does not match the data."""


class EntryBoundsError(MtxError):
    """An entry's indices fall outside the declared dimensions."""


class UnsupportedError(MtxError):
    """Array/complex/hermitian/skew-symmetric files are not handled."""


@dataclass
class CooMatrix:
    rows: int
    cols: int
    entries: list[tuple[int, int, float]]

    @property
    def nnz(self) -> int:
        return len(self.entries)


def parse_matrix_market(source) -> CooMatrix:
    """Parse a coordinate-format stream, path or string into COO form.

    Indices convert from the file's 1-based form to 0-based.  Symmetric
    storage is expanded on the fly, so the returned entry count can exceed
    the header's.  Duplicate coordinates are preserved here and summed by
    coo_to_csr.
    """
    if hasattr(source, "read"):
        stream = source
    elif isinstance(source, str) and "\n" in source:
        stream = io.StringIO(source)
    else:
        stream = open(source, "r", encoding="utf-8")

    header = stream.readline()
    parts = header.strip().split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket" or parts[1].lower() != "matrix":
        raise HeaderError(f"bad header line: {header.strip()!r}")
    layout, field_kind, symmetry = (p.lower() for p in parts[2:5])
    if layout != "coordinate":
        raise UnsupportedError(f"layout {layout!r} not supported")
    if field_kind not in ("real", "integer", "pattern"):
        raise UnsupportedError(f"field {field_kind!r} not supported")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedError(f"symmetry {symmetry!r} not supported")
    pattern = field_kind == "pattern"

    size_line = None
    for line in stream:
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        size_line = stripped
        break
    if size_line is None:
        raise DimensionError("missing dimension line")
    dims = size_line.split()
    if len(dims) != 3:
        raise DimensionError(f"bad dimension line: {size_line!r}")
    try:
        rows, cols, declared = (int(d) for d in dims)
    except ValueError as exc:
        raise DimensionError(f"bad dimension line: {size_line!r}") from exc

    entries: list[tuple[int, int, float]] = []
    count = 0
    for line in stream:
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        fields = stripped.split()
        expected = 2 if pattern else 3
        if len(fields) < expected:
            raise DimensionError(f"bad entry line: {stripped!r}")
        r, c = int(fields[0]) - 1, int(fields[1]) - 1
        if not (0 <= r < rows and 0 <= c < cols):
            raise EntryBoundsError(f"entry ({r + 1}, {c + 1}) outside {rows}x{cols}")
        v = 1.0 if pattern else float(fields[2])
        entries.append((r, c, v))
        if symmetry == "symmetric" and r != c:
            entries.append((c, r, v))
        count += 1
    if count != declared:
        raise DimensionError(f"header declares {declared} entries, found {count}")
    return CooMatrix(rows, cols, entries)


def coo_to_csr(coo: CooMatrix) -> CsrMatrix:
    """Sort by (row, col), sum duplicates, build row offsets."""
    entries = sorted(coo.entries, key=lambda e: (e[0], e[1]))
    rows_out: list[int] = []
    cols_out: list[int] = []
    vals_out: list[float] = []
    for r, c, v in entries:
        if rows_out and rows_out[-1] == r and cols_out[-1] == c:
            vals_out[-1] += v
        else:
            rows_out.append(r)
            cols_out.append(c)
            vals_out.append(v)
    row_starts = np.zeros(coo.rows + 1, dtype=np.int64)
    for r in rows_out:
        row_starts[r + 1] += 1
    np.cumsum(row_starts, out=row_starts)
    return CsrMatrix(coo.rows, coo.cols, row_starts,
                     np.array(cols_out, dtype=np.int64),
                     np.array(vals_out, dtype=np.float64))


def csr_to_coo(csr: CsrMatrix) -> CooMatrix:
    entries = []
    for r in range(csr.rows):
        for idx in range(csr.row_starts[r], csr.row_starts[r + 1]):
            entries.append((r, int(csr.col_ids[idx]), float(csr.values[idx])))
    return CooMatrix(csr.rows, csr.cols, entries)


def write_matrix_market(path, csr: CsrMatrix) -> None:
    """Serialize in general coordinate form (no symmetry folding)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{csr.rows} {csr.cols} {csr.nnz}\n")
        for r in range(csr.rows):
            for idx in range(csr.row_starts[r], csr.row_starts[r + 1]):
                fh.write(f"{r + 1} {int(csr.col_ids[idx]) + 1} "
                         f"{csr.values[idx]:.17g}\n")


def matrix_stats(csr: CsrMatrix) -> tuple[int, int, float, bool]:
    """(M, nnz, average nonzeros per row, symmetric).

    Symmetry is structural and numerical, to 1e-12 relative tolerance.
    """
    m = csr.rows
    nnz = csr.nnz
    nz_av = nnz / m if m else 0.0
    symmetric = False
    if csr.rows == csr.cols:
        fwd = {}
        for r in range(csr.rows):
            for idx in range(csr.row_starts[r], csr.row_starts[r + 1]):
                fwd[(r, int(csr.col_ids[idx]))] = float(csr.values[idx])
        symmetric = True
        for (r, c), v in fwd.items():
            w = fwd.get((c, r))
            if w is None:
                symmetric = False
                break
            scale = max(abs(v), abs(w), 1e-300)
            if abs(v - w) > 1e-12 * scale:
                symmetric = False
                break
    return m, nnz, nz_av, symmetric
