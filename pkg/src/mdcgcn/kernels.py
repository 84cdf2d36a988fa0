"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba implementations are used when numba imports cleanly and the
environment variable ``MDCGCN_DISABLE_NUMBA`` is unset (or ``0``).  Both
paths are always importable as ``*_numba`` / ``*_numpy`` so they can be
compared directly; the unsuffixed names are bound to the selected path.

All kernels sum in a fixed sequential order, so results are reproducible
run to run on either path.
"""

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    _HAVE_NUMBA = False

_DISABLED = os.environ.get("MDCGCN_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

USE_NUMBA = _HAVE_NUMBA and not _DISABLED


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations


_PADDED_MAX = 16


def csr_spmm_numpy(indptr, indices, data, x):
    """Multiply a CSR matrix with a dense matrix: ``out = A @ x``."""
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]), dtype=x.dtype)
    if indices.shape[0] == 0:
        return out
    counts = np.diff(indptr)
    width = int(counts.max())
    data = data.astype(x.dtype, copy=False)
    if width <= _PADDED_MAX:
        # face graphs have at most 4 entries per row: sum padded column slots in order
        for k in range(width):
            full = bool((counts > k).all())
            rows = slice(None) if full else np.flatnonzero(counts > k)
            pos = indptr[:-1][rows] + k
            term = x[indices[pos]]
            term *= data[pos, None]
            out[rows] += term
        return out
    nonempty = counts > 0
    contrib = data[:, None] * x[indices]
    out[nonempty] = np.add.reduceat(contrib, indptr[:-1][nonempty], axis=0)
    return out


def segment_sum_numpy(x, offsets):
    """Row sums over consecutive segments ``x[offsets[g]:offsets[g+1]]``."""
    g = offsets.shape[0] - 1
    out = np.zeros((g, x.shape[1]), dtype=x.dtype)
    counts = np.diff(offsets)
    nonempty = counts > 0
    if nonempty.any():
        out[nonempty] = np.add.reduceat(x, offsets[:-1][nonempty], axis=0)
    return out


def scatter_add_rows_numpy(index, values, n):
    """``out[index[k]] += values[k]`` for every k, into an ``n``-row array."""
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, index, values)
    return out


# ---------------------------------------------------------------------------
# numba implementations

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _csr_spmm_kernel(indptr, indices, data, x, out):
        ncol = x.shape[1]
        for i in range(indptr.shape[0] - 1):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                w = data[k]
                for c in range(ncol):
                    out[i, c] += w * x[j, c]

    @numba.njit(cache=True)
    def _segment_sum_kernel(x, offsets, out):
        ncol = x.shape[1]
        for g in range(offsets.shape[0] - 1):
            for r in range(offsets[g], offsets[g + 1]):
                for c in range(ncol):
                    out[g, c] += x[r, c]

    @numba.njit(cache=True)
    def _scatter_add_kernel(index, values, out):
        ncol = values.shape[1]
        for k in range(index.shape[0]):
            i = index[k]
            for c in range(ncol):
                out[i, c] += values[k, c]

    def csr_spmm_numba(indptr, indices, data, x):
        x = np.ascontiguousarray(x)
        out = np.zeros((indptr.shape[0] - 1, x.shape[1]), dtype=x.dtype)
        _csr_spmm_kernel(indptr, indices, data.astype(x.dtype, copy=False), x, out)
        return out

    def segment_sum_numba(x, offsets):
        x = np.ascontiguousarray(x)
        out = np.zeros((offsets.shape[0] - 1, x.shape[1]), dtype=x.dtype)
        _segment_sum_kernel(x, offsets, out)
        return out

    def scatter_add_rows_numba(index, values, n):
        values = np.ascontiguousarray(values)
        flat = values.reshape(values.shape[0], -1)
        out = np.zeros((n, flat.shape[1]), dtype=values.dtype)
        _scatter_add_kernel(np.ascontiguousarray(index, dtype=np.int64), flat, out)
        return out.reshape((n,) + values.shape[1:])

else:  # pragma: no cover
    csr_spmm_numba = csr_spmm_numpy
    segment_sum_numba = segment_sum_numpy
    scatter_add_rows_numba = scatter_add_rows_numpy


if USE_NUMBA:
    csr_spmm = csr_spmm_numba
    segment_sum = segment_sum_numba
    scatter_add_rows = scatter_add_rows_numba
else:
    csr_spmm = csr_spmm_numpy
    segment_sum = segment_sum_numpy
    scatter_add_rows = scatter_add_rows_numpy
