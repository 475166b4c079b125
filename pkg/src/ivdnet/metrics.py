"""Volumetric evaluation: Dice overlap and per-disc localization distance."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from . import kernels
from .data import Subject, subject_slices, batches, stack_slices


def _binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary (0/1)")
        arr = arr.astype(bool)
    return arr


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")


def dsc(ref_mask, auto_mask) -> float:
    """Dice similarity coefficient. Two empty masks score 1.0."""
    ref = _binary(ref_mask, "ref_mask")
    auto = _binary(auto_mask, "auto_mask")
    _same_shape(ref, auto)
    n_ref, n_auto, both = kernels.overlap_counts(ref, auto)
    if n_ref + n_auto == 0:
        return 1.0
    return 2.0 * both / (n_ref + n_auto)


def connected_components(mask) -> tuple[np.ndarray, int]:
    """26-connected labelling; returns ``(labels, count)`` with labels 1..count."""
    arr = _binary(mask, "mask")
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D mask, got {arr.ndim}D")
    return kernels.label_components(arr)


def barycenter(voxels) -> tuple[float, float, float]:
    """Mean index coordinate of a component given as (N, 3) voxel coordinates."""
    coords = np.asarray(voxels, dtype=np.float64).reshape(-1, 3)
    if coords.shape[0] == 0:
        raise ValueError("barycenter of an empty component is undefined")
    return tuple(float(c) for c in coords.mean(axis=0))


def component_barycenters(labels: np.ndarray, count: int) -> np.ndarray:
    """(count, 3) array of barycenters for labels 1..count."""
    counts, sums = kernels.component_stats(labels, count)
    if count and (counts[1:] == 0).any():
        raise ValueError("label image has empty components")
    return sums[1:] / counts[1:, None]


@dataclass
class Localization:
    distances: list[float]
    pairs: list[tuple[int, int]]          # (gt index, predicted index), 0-based
    gt_centers: np.ndarray
    pred_centers: np.ndarray
    misses: int
    false_positives: int

    @property
    def matched(self) -> int:
        return len(self.pairs)

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances)) if self.distances else math.nan


def greedy_match(gt: np.ndarray, pred: np.ndarray) -> tuple[list[tuple[int, int]], list[float]]:
    """Pair centres by ascending distance, each centre used at most once."""
    if len(gt) == 0 or len(pred) == 0:
        return [], []
    dist = np.sqrt(((gt[:, None, :] - pred[None, :, :]) ** 2).sum(-1))
    gi, pj = np.meshgrid(np.arange(len(gt)), np.arange(len(pred)), indexing="ij")
    order = np.lexsort((pj.ravel(), gi.ravel(), dist.ravel()))
    used_g, used_p = set(), set()
    pairs, dists = [], []
    for flat in order:
        i, j = int(gi.flat[flat]), int(pj.flat[flat])
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        pairs.append((i, j))
        dists.append(float(dist[i, j]))
        if len(pairs) == min(len(gt), len(pred)):
            break
    return pairs, dists


def localization_distance(ref_mask, auto_mask) -> Localization:
    ref = _binary(ref_mask, "ref_mask")
    auto = _binary(auto_mask, "auto_mask")
    _same_shape(ref, auto)
    ref_lab, n_ref = connected_components(ref)
    if n_ref == 0:
        raise ValueError("reference mask has no components to localize")
    auto_lab, n_auto = connected_components(auto)
    gt = component_barycenters(ref_lab, n_ref)
    pred = component_barycenters(auto_lab, n_auto) if n_auto else np.zeros((0, 3))
    pairs, dists = greedy_match(gt, pred)
    return Localization(dists, pairs, gt, pred, n_ref - len(pairs), n_auto - len(pairs))


@dataclass
class EvalReport:
    subject_id: str
    dsc: float
    distances: list[float] = field(default_factory=list)
    mean_distance: float = math.nan
    matched: int = 0
    misses: int = 0
    false_positives: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_volumes(ref_mask, auto_mask, subject_id: str = "") -> EvalReport:
    loc = localization_distance(ref_mask, auto_mask)
    return EvalReport(
        subject_id=subject_id,
        dsc=dsc(ref_mask, auto_mask),
        distances=loc.distances,
        mean_distance=loc.mean_distance,
        matched=loc.matched,
        misses=loc.misses,
        false_positives=loc.false_positives,
    )


Predictor = Callable[[torch.Tensor], torch.Tensor]


@torch.no_grad()
def predict_volume(model: Predictor, subject: Subject, batch_size: int = 4) -> np.ndarray:
    """Segment a subject slice by slice and stack the argmax labels to 3D."""
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    try:
        dtype = next(model.parameters()).dtype if hasattr(model, "parameters") else torch.float32
        out = []
        for batch in batches(subject_slices(subject), batch_size):
            probs = model(torch.from_numpy(batch.inputs).to(dtype))
            batch.labels = probs.argmax(dim=1).to(torch.uint8).numpy()
            out.append(batch)
    finally:
        if was_training:
            model.train()
    return stack_slices(out, subject.shape[0], subject.subject_id)


def evaluate_subject(model: Predictor, subject: Subject, batch_size: int = 4) -> EvalReport:
    pred = predict_volume(model, subject, batch_size)
    return evaluate_volumes(subject.label.voxels, pred, subject.subject_id)


def aggregate(reports: Sequence[EvalReport]) -> dict:
    """Mean and std over subjects, with Table-2 style ``mean ± std`` strings."""
    d = np.array([r.dsc for r in reports], dtype=float)
    loc = np.array([r.mean_distance for r in reports], dtype=float)
    finite = loc[np.isfinite(loc)]
    out = {
        "subjects": len(reports),
        "dsc_mean": float(d.mean()) if d.size else math.nan,
        "dsc_std": float(d.std()) if d.size else math.nan,
        "distance_mean": float(finite.mean()) if finite.size else math.nan,
        "distance_std": float(finite.std()) if finite.size else math.nan,
        "misses": int(sum(r.misses for r in reports)),
        "false_positives": int(sum(r.false_positives for r in reports)),
    }
    out["dsc"] = f"{out['dsc_mean']:.4f} ± {out['dsc_std']:.4f}"
    out["distance"] = f"{out['distance_mean']:.4f} ± {out['distance_std']:.4f}"
    return out
