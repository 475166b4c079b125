"""Hot loops of the volumetric metrics.

Each kernel exists twice: a numba ``@njit`` version and a vectorized numpy
version. The public names (``label_components``, ``component_stats``,
``overlap_counts``) dispatch to numba unless it is missing or the
environment sets ``IVDNET_DISABLE_NUMBA=1``. Both paths return identical
results, including label numbering (raster order of each component's
first voxel).
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAS_NUMBA and not _env_flag("IVDNET_DISABLE_NUMBA")

# the 13 neighbours preceding a voxel in raster order, 26-connectivity
_BACKWARD = np.array(
    [(dz, dy, dx)
     for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
     if (dz, dy, dx) < (0, 0, 0)],
    dtype=np.int64,
)
_ALL26 = np.array(
    [(dz, dy, dx)
     for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
     if (dz, dy, dx) != (0, 0, 0)],
    dtype=np.int64,
)


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def _label_numba(mask, offsets):
    D, H, W = mask.shape
    n = D * H * W
    parent = np.arange(n)
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                i = (z * H + y) * W + x
                for k in range(offsets.shape[0]):
                    zz = z + offsets[k, 0]
                    yy = y + offsets[k, 1]
                    xx = x + offsets[k, 2]
                    if zz < 0 or yy < 0 or xx < 0 or yy >= H or xx >= W:
                        continue
                    if not mask[zz, yy, xx]:
                        continue
                    j = (zz * H + yy) * W + xx
                    ri = _find(parent, i)
                    rj = _find(parent, j)
                    if ri < rj:
                        parent[rj] = ri
                    elif rj < ri:
                        parent[ri] = rj
    labels = np.zeros((D, H, W), dtype=np.int32)
    root_label = np.zeros(n, dtype=np.int32)
    count = 0
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                r = _find(parent, (z * H + y) * W + x)
                if root_label[r] == 0:
                    count += 1
                    root_label[r] = count
                labels[z, y, x] = root_label[r]
    return labels, count


@njit(cache=True)
def _stats_numba(labels, n):
    counts = np.zeros(n + 1, dtype=np.int64)
    sums = np.zeros((n + 1, 3), dtype=np.float64)
    D, H, W = labels.shape
    for z in range(D):
        for y in range(H):
            for x in range(W):
                k = labels[z, y, x]
                if k:
                    counts[k] += 1
                    sums[k, 0] += z
                    sums[k, 1] += y
                    sums[k, 2] += x
    return counts, sums


@njit(cache=True)
def _overlap_numba(a, b):
    na = 0
    nb = 0
    both = 0
    fa = a.ravel()
    fb = b.ravel()
    for i in range(fa.size):
        if fa[i]:
            na += 1
            if fb[i]:
                both += 1
        if fb[i]:
            nb += 1
    return na, nb, both


# ---------------------------------------------------------------- numpy path

def _label_numpy(mask: np.ndarray) -> tuple[np.ndarray, int]:
    # min-label propagation over 26 neighbours with pointer jumping
    shape = mask.shape
    n = mask.size
    big = n + 1
    lab = np.where(mask, np.arange(1, n + 1, dtype=np.int64).reshape(shape), big)
    fg = np.flatnonzero(mask)
    if fg.size == 0:
        return np.zeros(shape, dtype=np.int32), 0
    D, H, W = shape
    while True:
        padded = np.pad(lab, 1, constant_values=big)
        new = lab.copy()
        for dz, dy, dx in _ALL26:
            np.minimum(new, padded[1 + dz:1 + dz + D, 1 + dy:1 + dy + H, 1 + dx:1 + dx + W],
                       out=new)
        new[~mask] = big
        flat = new.ravel()
        while True:
            jumped = flat[flat[fg] - 1]
            if np.array_equal(jumped, flat[fg]):
                break
            flat[fg] = jumped
        if np.array_equal(new, lab):
            break
        lab = new
    roots = np.unique(lab[mask])
    out = np.zeros(shape, dtype=np.int32)
    out[mask] = np.searchsorted(roots, lab[mask]) + 1
    return out, int(roots.size)


def _stats_numpy(labels: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n + 1).astype(np.int64)
    coords = np.indices(labels.shape).reshape(3, -1).astype(np.float64)
    sums = np.stack(
        [np.bincount(flat, weights=c, minlength=n + 1) for c in coords], axis=1
    )
    counts[0] = 0
    sums[0] = 0.0
    return counts, sums


def _overlap_numpy(a: np.ndarray, b: np.ndarray) -> tuple[int, int, int]:
    return (int(np.count_nonzero(a)), int(np.count_nonzero(b)),
            int(np.count_nonzero(a & b)))


# ---------------------------------------------------------------- dispatch

def label_components_numba(mask):
    labels, n = _label_numba(np.ascontiguousarray(mask, dtype=np.bool_), _BACKWARD)
    return labels, int(n)


def label_components_numpy(mask):
    return _label_numpy(np.asarray(mask, dtype=bool))


def component_stats_numba(labels, n):
    return _stats_numba(np.ascontiguousarray(labels, dtype=np.int32), int(n))


def component_stats_numpy(labels, n):
    return _stats_numpy(np.asarray(labels, dtype=np.int64), int(n))


def overlap_counts_numba(a, b):
    na, nb, both = _overlap_numba(np.ascontiguousarray(a, dtype=np.bool_),
                                  np.ascontiguousarray(b, dtype=np.bool_))
    return int(na), int(nb), int(both)


def overlap_counts_numpy(a, b):
    return _overlap_numpy(np.asarray(a, dtype=bool), np.asarray(b, dtype=bool))


if USE_NUMBA:
    label_components = label_components_numba
    component_stats = component_stats_numba
    overlap_counts = overlap_counts_numba
else:
    label_components = label_components_numpy
    component_stats = component_stats_numpy
    overlap_counts = overlap_counts_numpy
