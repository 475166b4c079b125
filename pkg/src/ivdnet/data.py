"""Synthetic multi-modal spine phantoms, slice handling and dataset I/O.

Volumes are indexed ``(depth, height, width)`` where depth is the sagittal
index, height runs along the spine and width is anterior-posterior.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import nibabel as nib
import numpy as np

MODALITIES = ("in_phase", "opposed_phase", "fat", "water")

BACKGROUND, SOFT, VERTEBRA, DISC, FAT, CANAL = range(6)

# mean tissue intensity per modality before the gamma curve
DEFAULT_PROFILES = {
    "in_phase": dict(tissue=(0.02, 0.40, 0.55, 0.62, 0.85, 0.45), gamma=1.0,
                     noise=0.06, bias=0.15),
    "opposed_phase": dict(tissue=(0.02, 0.35, 0.25, 0.55, 0.20, 0.50), gamma=0.8,
                          noise=0.07, bias=0.20),
    "fat": dict(tissue=(0.02, 0.25, 0.60, 0.22, 0.95, 0.15), gamma=1.3,
                noise=0.05, bias=0.10),
    "water": dict(tissue=(0.02, 0.45, 0.30, 0.65, 0.10, 0.70), gamma=0.9,
                  noise=0.08, bias=0.25),
}


@dataclass
class ModalityVolume:
    voxels: np.ndarray
    modality_id: str
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def shape(self):
        return self.voxels.shape


@dataclass
class Subject:
    subject_id: str
    modalities: list[ModalityVolume]
    label: ModalityVolume

    @property
    def shape(self):
        return self.label.shape

    def stacked_inputs(self) -> np.ndarray:
        """(M, D, H, W) float32 array of the modality volumes."""
        return np.stack([m.voxels for m in self.modalities]).astype(np.float32)


@dataclass
class SliceBatch:
    inputs: np.ndarray          # (B, M, H, W) float32
    labels: np.ndarray          # (B, H, W) uint8
    subject_ids: list[str] = field(default_factory=list)
    slice_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.inputs.shape[0]


# ---------------------------------------------------------------- phantom

@dataclass(frozen=True)
class Disc:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]


def _disc_geometry(rng, num_discs, shape) -> list[Disc]:
    D, H, W = shape
    margin = 0.06 * H
    pitch = (H - 2 * margin) / num_discs
    # worst case: half-heights 0.24 pitch each plus 0.08 pitch jitter per side
    if pitch * (1 - 2 * 0.24 - 2 * 0.08) < 3 or pitch * 0.16 < 1:
        raise ValueError(
            f"{num_discs} discs do not fit along height {H} with 2-voxel separation"
        )
    if D < 5 or W < 16:
        raise ValueError(f"volume shape {shape} too small for disc phantoms")
    discs = []
    phase = rng.uniform(0, 2 * math.pi)
    for k in range(num_discs):
        cy = margin + pitch * (k + 0.5) + rng.uniform(-0.08, 0.08) * pitch
        ry = pitch * rng.uniform(0.16, 0.24)
        cz = (D - 1) / 2 + rng.uniform(-0.04, 0.04) * D
        rz = max(1.5, D * rng.uniform(0.26, 0.34))
        # gentle lordosis-like drift of the spine along the AP axis
        cx = W * (0.45 + 0.05 * math.sin(phase + 2.5 * k / num_discs)) + rng.uniform(-0.01, 0.01) * W
        rx = W * rng.uniform(0.09, 0.13)
        discs.append(Disc((cz, cy, cx), (rz, ry, rx)))
    for a, b in zip(discs, discs[1:]):
        top = math.floor(a.center[1] + a.radii[1])
        bottom = math.ceil(b.center[1] - b.radii[1])
        if bottom - top < 2:
            raise ValueError("disc geometry violates the 2-voxel separation")
    return discs


def _ellipsoid_mask(shape, disc: Disc, scale=(1.0, 1.0, 1.0)) -> tuple[tuple[slice, ...], np.ndarray]:
    radii = [r * s for r, s in zip(disc.radii, scale)]
    box = []
    grids = []
    for c, r, n in zip(disc.center, radii, shape):
        lo = max(0, math.floor(c - r))
        hi = min(n, math.ceil(c + r) + 1)
        box.append(slice(lo, hi))
        grids.append((np.arange(lo, hi) - c) / r)
    gz, gy, gx = np.meshgrid(*grids, indexing="ij", sparse=True)
    return tuple(box), gz ** 2 + gy ** 2 + gx ** 2 <= 1.0


def _tissue_map(shape, discs) -> np.ndarray:
    D, H, W = shape
    tissue = np.full(shape, SOFT, dtype=np.uint8)
    x = np.arange(W)
    tissue[:, :, x < int(0.06 * W)] = BACKGROUND
    tissue[:, :, x >= int(0.94 * W)] = BACKGROUND
    tissue[:, :, (x >= int(0.06 * W)) & (x < int(0.12 * W))] = FAT
    tissue[:, :, (x >= int(0.84 * W)) & (x < int(0.94 * W))] = FAT

    # vertebral bodies between and around discs, canal posterior to them
    centers = [d.center for d in discs]
    radii = [d.radii for d in discs]
    bounds = [0.0] + [
        (a[1] + b[1]) / 2 for a, b in zip(centers, centers[1:])
    ] + [float(H)]
    for k, (c, r) in enumerate(zip(centers, radii)):
        z0 = max(0, int(c[0] - 1.15 * r[0]))
        z1 = min(D, int(c[0] + 1.15 * r[0]) + 1)
        x0 = max(0, int(c[2] - 1.1 * r[2]))
        x1 = min(W, int(c[2] + 1.1 * r[2]) + 1)
        y0 = max(0, int(bounds[k]))
        y1 = min(H, int(bounds[k + 1]))
        tissue[z0:z1, y0:y1, x0:x1] = VERTEBRA
        cx0 = min(W, x1 + 2)
        cx1 = min(W, cx0 + max(2, int(0.05 * W)))
        cz0 = max(0, int(c[0] - 0.4 * r[0]))
        cz1 = min(D, int(c[0] + 0.4 * r[0]) + 1)
        tissue[cz0:cz1, y0:y1, cx0:cx1] = CANAL
    return tissue


def _bias_field(rng, shape, strength) -> np.ndarray:
    D, H, W = shape
    field_ = np.ones(shape)
    axes = np.meshgrid(np.linspace(0, 1, D), np.linspace(0, 1, H), np.linspace(0, 1, W),
                       indexing="ij", sparse=True)
    for _ in range(3):
        freq = rng.uniform(0.3, 1.2, size=3)
        phase = rng.uniform(0, 2 * math.pi, size=3)
        term = 1.0
        for g, f, p in zip(axes, freq, phase):
            term = term * np.cos(2 * math.pi * f * g + p)
        field_ = field_ + strength / 3 * term
    return field_


def generate_phantom(
    seed: int,
    num_discs: int = 7,
    volume_shape: Sequence[int] = (36, 256, 256),
    modality_profiles: dict | None = None,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
) -> tuple[list[ModalityVolume], ModalityVolume]:
    """Render one synthetic multi-modal subject.

    Geometry depends on ``seed`` only, so changing ``modality_profiles`` never
    changes the label volume. Each modality maps the shared tissue layout
    through its own intensity table and gamma curve, then adds a smooth
    multiplicative bias field and Gaussian noise.
    """
    if num_discs < 1:
        raise ValueError(f"num_discs must be >= 1, got {num_discs}")
    shape = tuple(int(n) for n in volume_shape)
    if len(shape) != 3:
        raise ValueError(f"volume_shape must have 3 entries, got {volume_shape}")
    profiles = DEFAULT_PROFILES if modality_profiles is None else modality_profiles
    spacing = tuple(float(s) for s in spacing)

    geo_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    discs = _disc_geometry(np.random.default_rng(geo_seq), num_discs, shape)

    label = np.zeros(shape, dtype=np.uint8)
    for disc in discs:
        box, inside = _ellipsoid_mask(shape, disc)
        label[box][inside] = 1
    tissue = _tissue_map(shape, discs)
    tissue[label == 1] = DISC

    noise_rngs = [np.random.default_rng(s) for s in noise_seq.spawn(len(profiles))]
    volumes = []
    for (name, prof), rng in zip(profiles.items(), noise_rngs):
        lut = np.asarray(prof["tissue"], dtype=np.float64)
        img = lut[tissue] ** prof.get("gamma", 1.0)
        img = img * _bias_field(rng, shape, prof.get("bias", 0.0))
        img = img + rng.normal(0.0, prof.get("noise", 0.0), size=shape)
        volumes.append(ModalityVolume(np.clip(img, 0, None).astype(np.float32), name, spacing))
    return volumes, ModalityVolume(label, "label", spacing)


def make_subject(subject_id: str, seed: int, **kwargs) -> Subject:
    volumes, label = generate_phantom(seed, **kwargs)
    return Subject(subject_id, [normalize(v) for v in volumes], label)


def make_cohort(num_subjects: int, seed: int = 0, **kwargs) -> list[Subject]:
    seeds = np.random.SeedSequence(seed).generate_state(num_subjects)
    return [make_subject(f"sub-{i:03d}", int(s), **kwargs) for i, s in enumerate(seeds)]


# ---------------------------------------------------------------- preprocessing

def normalize(volume):
    """Min-max rescale to [0, 1]; constant volumes become all zeros."""
    if isinstance(volume, ModalityVolume):
        return ModalityVolume(normalize(volume.voxels), volume.modality_id, volume.spacing)
    arr = np.asarray(volume)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr, dtype=np.float32 if arr.dtype.kind != "f" else arr.dtype)
    out = (arr - lo) / (hi - lo)
    return out.astype(arr.dtype) if arr.dtype.kind == "f" else out


def _voxels(v):
    return v.voxels if isinstance(v, ModalityVolume) else np.asarray(v)


def to_slices(volumes, labels, subject_id: str = "") -> list[SliceBatch]:
    """One sample per sagittal index, in index order."""
    arrays = [_voxels(v) for v in volumes]
    lab = _voxels(labels)
    if not arrays:
        raise ValueError("no modality volumes given")
    for i, a in enumerate(arrays):
        if a.ndim != 3 or a.shape != lab.shape:
            raise ValueError(
                f"modality {i} has shape {a.shape}, label has shape {lab.shape}"
            )
    stacked = np.stack(arrays, axis=1).astype(np.float32)   # (D, M, H, W)
    lab = lab.astype(np.uint8)
    return [
        SliceBatch(stacked[d:d + 1], lab[d:d + 1], [subject_id], np.array([d]))
        for d in range(lab.shape[0])
    ]


def subject_slices(subject: Subject) -> list[SliceBatch]:
    return to_slices(subject.modalities, subject.label, subject.subject_id)


def collate(samples: Sequence[SliceBatch]) -> SliceBatch:
    return SliceBatch(
        np.concatenate([s.inputs for s in samples]),
        np.concatenate([s.labels for s in samples]),
        [sid for s in samples for sid in s.subject_ids],
        np.concatenate([s.slice_indices for s in samples]),
    )


def batches(samples: Sequence[SliceBatch], batch_size: int,
            order: Iterable[int] | None = None) -> list[SliceBatch]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    idx = list(range(len(samples))) if order is None else list(order)
    return [collate([samples[i] for i in idx[k:k + batch_size]])
            for k in range(0, len(idx), batch_size)]


def stack_slices(slices: Sequence[SliceBatch], depth: int, subject: str | None = None) -> np.ndarray:
    """Reassemble per-slice label maps into a (depth, H, W) volume.

    Slices may arrive in any order; they are placed by ``slice_indices``.
    When ``subject`` is given, slices of other subjects are ignored.
    """
    found = {}
    for batch in slices:
        for k, d in enumerate(batch.slice_indices):
            if subject is not None and batch.subject_ids[k] != subject:
                continue
            d = int(d)
            if d in found:
                raise ValueError(f"slice {d} given twice")
            found[d] = batch.labels[k]
    missing = sorted(set(range(depth)) - set(found))
    if missing:
        raise ValueError(f"missing slice indices {missing[:10]} (of depth {depth})")
    extra = sorted(set(found) - set(range(depth)))
    if extra:
        raise ValueError(f"slice indices {extra[:10]} outside depth {depth}")
    return np.stack([found[d] for d in range(depth)])


def split_dataset(subjects: Sequence, train_fraction: float, seed: int = 0) -> tuple[list, list]:
    """Subject-level train/validation split."""
    n = len(subjects)
    if n < 2:
        raise ValueError(f"need at least 2 subjects to split, got {n}")
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = min(n - 1, max(1, int(round(n * train_fraction))))
    perm = np.random.default_rng(seed).permutation(n)
    train = [subjects[i] for i in sorted(perm[:n_train])]
    val = [subjects[i] for i in sorted(perm[n_train:])]
    return train, val


# ---------------------------------------------------------------- I/O

def save_volume(path, voxels: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    affine = np.diag([*map(float, spacing), 1.0])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    nib.save(nib.Nifti1Image(np.asarray(voxels), affine), str(path))


def read_volume(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"volume file not found: {path}")
    img = nib.load(str(path))
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])
    return np.asarray(img.dataobj), spacing


def save_dataset(root, subjects: Sequence[Subject]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for subj in subjects:
        files = {}
        for vol in subj.modalities:
            rel = f"{subj.subject_id}/{vol.modality_id}.nii.gz"
            save_volume(root / rel, vol.voxels.astype(np.float32), vol.spacing)
            files[vol.modality_id] = rel
        rel = f"{subj.subject_id}/label.nii.gz"
        save_volume(root / rel, subj.label.voxels.astype(np.uint8), subj.label.spacing)
        files["label"] = rel
        entries.append({
            "id": subj.subject_id,
            "shape": list(subj.shape),
            "spacing": list(subj.label.spacing),
            "files": files,
        })
    manifest = {
        "modalities": [v.modality_id for v in subjects[0].modalities] if subjects else [],
        "subjects": entries,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(root, subject_ids: Sequence[str] | None = None, normalized: bool = True) -> list[Subject]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(manifest_path.read_text())
    subjects = []
    for entry in manifest["subjects"]:
        if subject_ids is not None and entry["id"] not in subject_ids:
            continue
        mods = []
        for name in manifest["modalities"]:
            vox, spacing = read_volume(root / entry["files"][name])
            vol = ModalityVolume(vox.astype(np.float32), name, spacing)
            mods.append(normalize(vol) if normalized else vol)
        vox, spacing = read_volume(root / entry["files"]["label"])
        subjects.append(Subject(entry["id"], mods,
                                ModalityVolume(vox.astype(np.uint8), "label", spacing)))
    return subjects
