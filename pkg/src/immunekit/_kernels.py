"""Batched bit-string matching kernels.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy path.
The numpy path is used when numba is missing or when the environment
variable ``IMMUNEKIT_DISABLE_NUMBA`` is set to a truthy value. Both paths
return identical arrays; ``tests/test_kernels.py`` checks them against
each other.

Arrays follow one layout throughout: patterns are ``uint8`` of shape
``(n, L)`` and the optional ``care`` mask is ``bool`` of shape ``(m, L)``,
aligned with the second operand. A position with ``care == False`` is a
don't-care and always counts as agreeing.
"""

import os
import warnings

import numpy as np

HAMMING = 0
CONTIGUOUS = 1

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested():
    flag = os.environ.get("IMMUNEKIT_DISABLE_NUMBA", "")
    return flag.strip().lower() in _FALSY


try:
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    # numba falls back to another threading layer on its own; the notice is noise
    warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and _numba_requested()


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def _agree_np(a, b, care):
    agree = a[:, None, :] == b[None, :, :]
    if care is not None:
        agree |= ~care[None, :, :]
    return agree


def affinity_matrix_np(a, b, kind, care=None):
    agree = _agree_np(a, b, care)
    if kind == HAMMING:
        return agree.sum(axis=2, dtype=np.int64)
    run = np.zeros(agree.shape[:2], dtype=np.int64)
    best = np.zeros_like(run)
    for k in range(agree.shape[2]):
        run = (run + 1) * agree[:, :, k]
        np.maximum(best, run, out=best)
    return best


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @njit(cache=True, inline="always")
    def _pair_score(a, b, care, i, j, kind):
        count = 0
        run = 0
        best = 0
        for k in range(a.shape[1]):
            hit = (a[i, k] == b[j, k]) | (not care[j, k])
            count += hit
            run = (run + 1) * hit
            best = max(best, run)
        return count if kind == HAMMING else best

    # rows are independent, so prange keeps results deterministic
    @njit(cache=True, parallel=True)
    def _affinity_matrix_nb(a, b, kind, care):
        n = a.shape[0]
        m = b.shape[0]
        out = np.zeros((n, m), dtype=np.int64)
        for i in prange(n):
            for j in range(m):
                out[i, j] = _pair_score(a, b, care, i, j, kind)
        return out

    @njit(cache=True, parallel=True)
    def _match_any_nb(a, b, kind, r, care):
        n = a.shape[0]
        m = b.shape[0]
        out = np.zeros(n, dtype=np.bool_)
        for i in prange(n):
            for j in range(m):
                if _pair_score(a, b, care, i, j, kind) >= r:
                    out[i] = True
                    break
        return out


def _full_care(b, care):
    if care is None:
        return np.ones(b.shape, dtype=np.bool_)
    return np.ascontiguousarray(care, dtype=np.bool_)


def affinity_matrix(a, b, kind, care=None):
    """Pairwise affinity counts between the rows of ``a`` and ``b``.

    ``kind`` is ``HAMMING`` (agreeing positions) or ``CONTIGUOUS``
    (longest run of agreeing positions). Returns ``int64`` ``(n, m)``.
    """
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    if USE_NUMBA:
        return _affinity_matrix_nb(a, b, kind, _full_care(b, care))
    return affinity_matrix_np(a, b, kind, care)


def match_any(a, b, kind, r, care=None):
    """Boolean per row of ``a``: does it reach affinity ``r`` with any row of ``b``."""
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros(a.shape[0], dtype=bool)
    if USE_NUMBA:
        return _match_any_nb(a, b, kind, r, _full_care(b, care))
    return (affinity_matrix_np(a, b, kind, care) >= r).any(axis=1)


def universe(length):
    """All ``2**length`` bit strings as rows, most significant bit first."""
    codes = np.arange(2 ** length, dtype=np.int64)
    shifts = np.arange(length - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
