"""Synthetic knee-MRI stand-in datasets.

Writes a dataset tree shaped like the real distribution:
``{train,valid}/{axial,coronal,sagittal}/<case>.npy`` plus
``<split>-<task>.csv`` label files. Slice counts are uniform on
[17, 61]. A case positive for a task carries a bright soft-edged
ellipsoid at a task-specific in-plane location, centered somewhere in
the middle third of the slice axis, over uniform background noise with
a random per-volume base level (so global brightness carries no label
signal). Everything is a pure function of the seed.
"""

from pathlib import Path

import numpy as np

from .volume_io import (
    PLANES,
    TASKS,
    DatasetManifest,
    LabelTable,
    scan_dataset,
    write_labels,
    write_npy,
)

PREVALENCE = {"acl": 0.233, "meniscus": 0.371, "abnormal": 0.806}

# Fractional (row, col) lesion centers; distinct per task so a model can
# tell the tasks apart.
LESION_CENTERS = {"abnormal": (0.50, 0.50), "acl": (0.30, 0.30),
                  "meniscus": (0.70, 0.70)}

SLICE_RANGE = (17, 61)
NOISE_LEVEL = 0.30
BASE_LEVEL = 0.15
LESION_AMPLITUDE = 0.55


def _case_rng(seed, case_index, plane_index):
    return np.random.default_rng(np.random.SeedSequence([seed, 1, case_index, plane_index]))


def _render_volume(rng, s, height, width, positive_tasks):
    # A per-volume base level swamps the tiny global-brightness shift a
    # lesion adds, so exams are only separable by local contrast.
    base = rng.uniform(0.0, BASE_LEVEL)
    vol = base + rng.uniform(0.0, NOISE_LEVEL, size=(s, height, width))
    zz = np.arange(s, dtype=np.float64)[:, None, None]
    yy = np.arange(height, dtype=np.float64)[None, :, None]
    xx = np.arange(width, dtype=np.float64)[None, None, :]
    for task in TASKS:
        if task not in positive_tasks:
            continue
        fy, fx = LESION_CENTERS[task]
        cz = rng.uniform(s / 3.0, 2.0 * s / 3.0)
        cy = (fy + rng.uniform(-0.06, 0.06)) * height
        cx = (fx + rng.uniform(-0.06, 0.06)) * width
        rz = rng.uniform(2.5, 4.5)
        ry = rng.uniform(0.10, 0.16) * height
        rx = rng.uniform(0.10, 0.16) * width
        r2 = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        vol += LESION_AMPLITUDE * np.maximum(1.0 - r2, 0.0)
    return np.clip(vol, 0.0, 1.0)


def generate_synthetic(n_cases: int, seed: int, out, height: int = 64,
                       width: int = 64, valid_fraction: float = 0.2) -> dict:
    """Write a synthetic dataset and return {split: DatasetManifest}.

    The first (1 - valid_fraction) of the cases form the train split.
    """
    if n_cases < 4:
        raise ValueError("need at least 4 cases")
    root = Path(out)
    for split in ("train", "valid"):
        for plane in PLANES:
            (root / split / plane).mkdir(parents=True, exist_ok=True)
    n_valid = int(round(n_cases * valid_fraction))
    n_train = n_cases - n_valid
    label_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    labels = {split: {task: {} for task in TASKS} for split in ("train", "valid")}
    for i in range(n_cases):
        case_id = f"{i:04d}"
        split = "train" if i < n_train else "valid"
        positive = {task for task in TASKS if label_rng.random() < PREVALENCE[task]}
        for task in TASKS:
            labels[split][task][case_id] = 1 if task in positive else 0
        for plane_index, plane in enumerate(PLANES):
            rng = _case_rng(seed, i, plane_index)
            s = int(rng.integers(SLICE_RANGE[0], SLICE_RANGE[1] + 1))
            vol = _render_volume(rng, s, height, width, positive)
            write_npy(root / split / plane / f"{case_id}.npy",
                      np.round(vol * 255.0).astype(np.uint8))
    for split in ("train", "valid"):
        for task in TASKS:
            write_labels(root / f"{split}-{task}.csv",
                         LabelTable(task=task, entries=labels[split][task]))
    return {split: scan_dataset(root, split) for split in ("train", "valid")}
