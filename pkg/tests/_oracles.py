"""Slow, obviously-correct reference implementations used as test oracles."""
from collections import deque
from itertools import product

import numpy as np
import torch


def flood_fill_components(mask):
    """26-connected components by breadth-first search; list of voxel sets."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    offsets = [o for o in product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        comp = set()
        queue = deque([start])
        seen[start] = True
        while queue:
            v = queue.popleft()
            comp.add(tuple(int(c) for c in v))
            for o in offsets:
                w = tuple(v[i] + o[i] for i in range(3))
                if all(0 <= w[i] < mask.shape[i] for i in range(3)) and mask[w] and not seen[w]:
                    seen[w] = True
                    queue.append(w)
        comps.append(frozenset(comp))
    return comps


def partition_of(labels, count):
    return {frozenset(map(tuple, np.argwhere(labels == k).tolist())) for k in range(1, count + 1)}


def dsc_loop(a, b):
    inter = size_a = size_b = 0
    for x, y in zip(np.asarray(a).ravel().tolist(), np.asarray(b).ravel().tolist()):
        size_a += bool(x)
        size_b += bool(y)
        inter += bool(x) and bool(y)
    if size_a + size_b == 0:
        return 1.0
    return 2.0 * inter / (size_a + size_b)


def coordinate_mean(voxels):
    n = 0
    s = [0, 0, 0]
    for v in voxels:
        n += 1
        for i in range(3):
            s[i] += v[i]
    return tuple(c / n for c in s)


def greedy_pairs_brute(gt, pred):
    """Greedy matching by repeatedly scanning for the globally closest unused pair."""
    gt_left = set(range(len(gt)))
    pred_left = set(range(len(pred)))
    dists = []
    while gt_left and pred_left:
        best = None
        for i in sorted(gt_left):
            for j in sorted(pred_left):
                d = sum((gt[i][k] - pred[j][k]) ** 2 for k in range(3)) ** 0.5
                if best is None or d < best[0]:
                    best = (d, i, j)
        d, i, j = best
        dists.append(d)
        gt_left.remove(i)
        pred_left.remove(j)
    return dists


def cross_entropy_loop(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    B, _, H, W = probs.shape
    total = 0.0
    for b in range(B):
        for i in range(H):
            for j in range(W):
                total -= np.log(probs[b, labels[b, i, j], i, j])
    return total / (B * H * W)


def central_difference(fn, tensor, index, eps):
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + eps
        plus = fn()
        tensor[index] = orig - eps
        minus = fn()
        tensor[index] = orig
    return (plus - minus) / (2 * eps)


def central_slope(fn, tensor, index, eps, reach=3, smooth_tol=1e-8):
    """Derivative estimate that averages out rounding error where it is safe.

    Two-point central differences are taken at ``k * eps`` for
    ``k = 1..reach``. If they agree to within ``smooth_tol`` (plus a 1e-6
    relative slack) the function is smooth across the stencil and their
    least-squares combination is returned. Otherwise a kink (ReLU, max-pool
    tie) lies inside the stencil and the plain ``eps`` estimate is used.
    """
    ks = range(1, reach + 1)
    diffs = {}
    with torch.no_grad():
        orig = tensor[index].item()
        for k in ks:
            tensor[index] = orig + k * eps
            plus = fn()
            tensor[index] = orig - k * eps
            minus = fn()
            diffs[k] = plus - minus
        tensor[index] = orig
    slopes = [diffs[k] / (2 * k * eps) for k in ks]
    if max(slopes) - min(slopes) > smooth_tol + 1e-6 * abs(slopes[0]):
        central_slope.fallbacks += 1
        return slopes[0]
    return sum(k * diffs[k] for k in ks) / (2 * eps * sum(k * k for k in ks))


central_slope.fallbacks = 0


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
