"""Pure numpy implementations of the hot kernels.

Mirrors ``_core.pyx`` function for function.  Used when the compiled
extension is unavailable or ``DPTCOPULA_PURE_PYTHON`` is set.  Inputs are
assumed validated by the callers in the public modules.
"""

import numpy as np
from scipy.signal import lfilter


def cell_indices(x, level):
    n = 1 << level
    idx = np.floor(np.asarray(x, dtype=np.float64) * n).astype(np.int64)
    np.minimum(idx, n - 1, out=idx)
    return idx


def weighted_histogram(rows, cols, n, weight):
    flat = np.asarray(rows, dtype=np.int64) * n + np.asarray(cols, dtype=np.int64)
    w = np.full(flat.shape[0], weight, dtype=np.float64)
    return np.bincount(flat, weights=w, minlength=n * n).reshape(n, n)


def add_gathered(out, table, idx0, idx1):
    """``out[i] += table[idx0[i], idx1[i]]`` for every i."""
    out += table[idx0, idx1]


def garch_variance(r, omega, alpha, beta, sigma2_0):
    """sigma2[0] = sigma2_0; sigma2[t] = omega + alpha*r[t-1]**2 + beta*sigma2[t-1]."""
    r = np.asarray(r, dtype=np.float64)
    sigma2 = np.empty_like(r)
    if r.size == 0:
        return sigma2
    sigma2[0] = sigma2_0
    if r.size > 1:
        drive = omega + alpha * (r[:-1] * r[:-1])
        sigma2[1:], _ = lfilter([1.0], [1.0, -beta], drive, zi=[beta * sigma2_0])
    return sigma2


def interval_overlap_matrix(edges, n_new):
    """Fraction of each old interval ``[edges[i], edges[i+1])`` falling in
    each new uniform interval ``[j/n_new, (j+1)/n_new)``.

    Rows of zero-width old intervals are left at zero.
    """
    edges = np.asarray(edges, dtype=np.float64)
    lo = edges[:-1, None]
    hi = edges[1:, None]
    grid = np.arange(n_new + 1, dtype=np.float64) / n_new
    overlap = np.minimum(hi, grid[None, 1:]) - np.maximum(lo, grid[None, :-1])
    np.maximum(overlap, 0.0, out=overlap)
    width = (hi - lo)[:, 0]
    nz = width > 0
    out = np.zeros_like(overlap)
    out[nz] = overlap[nz] / width[nz, None]
    return out
