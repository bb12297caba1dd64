"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``RSRLAB_DISABLE_NUMBA`` is unset (or ``0``).  Both paths compute
the same values; the fallback exists for platforms without numba and as a
reference for the benchmark in ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    from numba import njit, prange

    # single-core hosts often ship an old TBB; numba falls back to another layer
    warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    if not _HAVE_NUMBA:
        return False
    return os.environ.get("RSRLAB_DISABLE_NUMBA", "0").strip().lower() in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# 1-D resampling along the first axis: out[i] = sum_k w[i, k] * x[idx[i, k]]


def _resample_rows_numpy(x: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    # x: (n, m) -> (len(idx), m)
    return np.einsum("ik,ikm->im", w, x[idx])


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _resample_rows_numba(x, idx, w):
        n_out, taps = idx.shape
        m = x.shape[1]
        out = np.zeros((n_out, m), dtype=np.float64)
        for i in prange(n_out):
            for k in range(taps):
                wk = w[i, k]
                src = idx[i, k]
                for j in range(m):
                    out[i, j] += wk * x[src, j]
        return out


def resample_rows(x: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if numba_enabled():
        return _resample_rows_numba(x, np.ascontiguousarray(idx, dtype=np.int64),
                                    np.ascontiguousarray(w, dtype=np.float64))
    return _resample_rows_numpy(x, idx, w)


# ---------------------------------------------------------------------------
# separable "valid" filtering of a stack of 2-D planes with a 1-D kernel


def _filter_valid_numpy(planes: np.ndarray, k: np.ndarray) -> np.ndarray:
    # planes: (p, h, w)
    n = k.shape[0]
    rows = np.lib.stride_tricks.sliding_window_view(planes, n, axis=1) @ k
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=2) @ k


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _filter_valid_numba(planes, k):
        p, h, w = planes.shape
        n = k.shape[0]
        ho = h - n + 1
        wo = w - n + 1
        tmp = np.zeros((p, ho, w), dtype=np.float64)
        out = np.zeros((p, ho, wo), dtype=np.float64)
        for c in prange(p):
            for i in range(ho):
                for t in range(n):
                    kt = k[t]
                    for j in range(w):
                        tmp[c, i, j] += kt * planes[c, i + t, j]
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for t in range(n):
                        acc += k[t] * tmp[c, i, j + t]
                    out[c, i, j] = acc
        return out


def filter_valid(planes: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Correlate every (h, w) plane with the separable kernel ``k ⊗ k``, valid region only."""
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    if numba_enabled():
        return _filter_valid_numba(planes, k)
    return _filter_valid_numpy(planes, k)
