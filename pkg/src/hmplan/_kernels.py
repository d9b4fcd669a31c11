"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin. The numba path is used unless
numba is missing or ``HMPLAN_DISABLE_NUMBA`` is set to a truthy value
before import. Both paths return identical results; the test suite
checks that directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("HMPLAN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return decorator


USE_NUMBA = HAS_NUMBA


# ----------------------------------------------------------------------------
# Sparse lattice convolution: out[z - lo] += 1 for every (x in a, y in b)
# ----------------------------------------------------------------------------


@njit(cache=True)
def _scatter_pairs_nb(a_idx, b_idx, lo, out):
    nx, ny, nz = out.shape
    for p in range(a_idx.shape[0]):
        ax = a_idx[p, 0] - lo[0]
        ay = a_idx[p, 1] - lo[1]
        az = a_idx[p, 2] - lo[2]
        for q in range(b_idx.shape[0]):
            i = ax + b_idx[q, 0]
            if i < 0 or i >= nx:
                continue
            j = ay + b_idx[q, 1]
            if j < 0 or j >= ny:
                continue
            k = az + b_idx[q, 2]
            if k < 0 or k >= nz:
                continue
            out[i, j, k] += 1
    return out


def _scatter_pairs_np(a_idx, b_idx, lo, out):
    # Iterate over the smaller point set; add a shifted dense slab per point.
    if a_idx.shape[0] > b_idx.shape[0]:
        a_idx, b_idx = b_idx, a_idx
    if b_idx.shape[0] == 0:
        return out
    bmin = b_idx.min(axis=0)
    bmax = b_idx.max(axis=0)
    slab = np.zeros(tuple(bmax - bmin + 1), dtype=out.dtype)
    np.add.at(slab, tuple((b_idx - bmin).T), 1)
    shape = np.array(out.shape)
    for p in a_idx:
        start = p + bmin - lo
        stop = start + slab.shape
        s0 = np.maximum(start, 0)
        s1 = np.minimum(stop, shape)
        if np.any(s1 <= s0):
            continue
        src0 = s0 - start
        src1 = src0 + (s1 - s0)
        out[s0[0]:s1[0], s0[1]:s1[1], s0[2]:s1[2]] += slab[
            src0[0]:src1[0], src0[1]:src1[1], src0[2]:src1[2]
        ]
    return out


def scatter_pairs(a_idx: np.ndarray, b_idx: np.ndarray, lo, shape, use_numba: bool | None = None) -> np.ndarray:
    """Count pair sums ``x + y`` landing in the box ``[lo, lo + shape)``."""
    out = np.zeros(tuple(int(s) for s in shape), dtype=np.int64)
    a_idx = np.ascontiguousarray(a_idx, dtype=np.int64).reshape(-1, 3)
    b_idx = np.ascontiguousarray(b_idx, dtype=np.int64).reshape(-1, 3)
    lo = np.asarray(lo, dtype=np.int64)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and HAS_NUMBA:
        return _scatter_pairs_nb(a_idx, b_idx, lo, out)
    return _scatter_pairs_np(a_idx, b_idx, lo, out)


# ----------------------------------------------------------------------------
# Per-voxel atom codes: primitive 1 is the most significant bit
# ----------------------------------------------------------------------------


@njit(cache=True)
def _encode_codes_nb(stack):
    n, m = stack.shape
    codes = np.zeros(m, dtype=np.uint64)
    for v in range(m):
        c = np.uint64(0)
        for i in range(n):
            c = (c << np.uint64(1)) | np.uint64(stack[i, v])
        codes[v] = c
    return codes


def _encode_codes_np(stack):
    n, m = stack.shape
    codes = np.zeros(m, dtype=np.uint64)
    for i in range(n):
        codes = (codes << np.uint64(1)) | stack[i].astype(np.uint64)
    return codes


def encode_codes(stack: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    stack = np.ascontiguousarray(stack, dtype=np.uint8)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and HAS_NUMBA:
        return _encode_codes_nb(stack)
    return _encode_codes_np(stack)


# ----------------------------------------------------------------------------
# Revolve: forward nearest-voxel scatter of rotated voxel centres
# ----------------------------------------------------------------------------


@njit(cache=True)
def _revolve_nb(idx, centre, axis, cos_t, sin_t, out):
    nx, ny, nz = out.shape
    u = (axis + 1) % 3
    w = (axis + 2) % 3
    dims = np.array([nx, ny, nz])
    for p in range(idx.shape[0]):
        du = idx[p, u] - centre[u]
        dw = idx[p, w] - centre[w]
        for t in range(cos_t.shape[0]):
            ru = centre[u] + cos_t[t] * du - sin_t[t] * dw
            rw = centre[w] + sin_t[t] * du + cos_t[t] * dw
            iu = int(np.floor(ru + 0.5))
            iw = int(np.floor(rw + 0.5))
            if iu < 0 or iu >= dims[u] or iw < 0 or iw >= dims[w]:
                continue
            if axis == 0:
                out[idx[p, 0], iu, iw] = True
            elif axis == 1:
                out[iw, idx[p, 1], iu] = True
            else:
                out[iu, iw, idx[p, 2]] = True
    return out


def _revolve_np(idx, centre, axis, cos_t, sin_t, out):
    u = (axis + 1) % 3
    w = (axis + 2) % 3
    du = (idx[:, u] - centre[u])[:, None]
    dw = (idx[:, w] - centre[w])[:, None]
    ru = centre[u] + cos_t[None, :] * du - sin_t[None, :] * dw
    rw = centre[w] + sin_t[None, :] * du + cos_t[None, :] * dw
    iu = np.floor(ru + 0.5).astype(np.int64).ravel()
    iw = np.floor(rw + 0.5).astype(np.int64).ravel()
    ia = np.repeat(idx[:, axis], cos_t.shape[0])
    keep = (iu >= 0) & (iu < out.shape[u]) & (iw >= 0) & (iw < out.shape[w])
    coords = [None, None, None]
    coords[axis] = ia[keep]
    coords[u] = iu[keep]
    coords[w] = iw[keep]
    out[tuple(coords)] = True
    return out


def revolve_scatter(idx, centre, axis: int, angles, shape, use_numba: bool | None = None) -> np.ndarray:
    out = np.zeros(tuple(shape), dtype=np.bool_)
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 3)
    centre = np.asarray(centre, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    cos_t = np.cos(angles)
    sin_t = np.sin(angles)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and HAS_NUMBA:
        return _revolve_nb(idx, centre, int(axis), cos_t, sin_t, out)
    return _revolve_np(idx, centre, int(axis), cos_t, sin_t, out)
