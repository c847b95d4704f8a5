"""Matrix Market coordinate I/O with value-exact round trips."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

_HEADER = "%%MatrixMarket matrix coordinate real general"


def mm_write(path, mat, comment: str = "") -> None:
    """Write a sparse matrix, 1-based indices, %.17g values (round-trip exact)."""
    coo = sp.coo_matrix(mat)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
    lines = [_HEADER]
    if comment:
        lines.append(f"% {comment}")
    lines.append(f"{coo.shape[0]} {coo.shape[1]} {len(vals)}")
    for i, j, v in zip(rows, cols, vals):
        lines.append("%d %d %.17g" % (i + 1, j + 1, v))
    Path(path).write_text("\n".join(lines) + "\n")


def mm_read(path) -> sp.csr_matrix:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("%%MatrixMarket"):
        raise ValueError(f"{path} is not a Matrix Market file")
    head = text[0].lower().split()
    if head[2:4] != ["coordinate", "real"]:
        raise ValueError(f"unsupported Matrix Market flavor {' '.join(head[2:])}")
    body = [ln for ln in text[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    nr, nc, nnz = (int(t) for t in body[0].split())
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, ln in enumerate(body[1:1 + nnz]):
        i, j, v = ln.split()
        rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(v)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(nr, nc)).tocsr()
    mat.sort_indices()
    return mat
