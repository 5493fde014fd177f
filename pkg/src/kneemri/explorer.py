"""Export a static explorer bundle: one grayscale PNG per slice plus a
manifest.json the web viewer consumes.

Bundle layout: ``cases/<case_id>/<plane>/<index>.png`` with pixel value
round(255 * intensity), and a manifest listing per-plane slice counts,
file paths, task labels, and optional per-task model predictions.
"""

import json
from pathlib import Path

from PIL import Image
import numpy as np

from .metrics import read_predictions
from .volume_io import PLANES, TASKS, DatasetManifest, load_labels, load_volume


def _case_predictions(records):
    """Mean probability per (case, task) over whatever planes are present."""
    sums, counts = {}, {}
    for r in records:
        key = (r.case_id, r.task)
        sums[key] = sums.get(key, 0.0) + r.probability
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def export_explorer(manifest: DatasetManifest, out, predictions=None) -> dict:
    """Write the PNG tree and manifest.json; returns the manifest document.

    ``predictions`` may be a list of PredictionRecords or a path to a
    predictions CSV as written by training.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(predictions, (str, Path)):
        predictions = read_predictions(predictions)
    pred_map = _case_predictions(predictions) if predictions else {}
    labels = {}
    for task in TASKS:
        path = manifest.label_path(task)
        if path.exists():
            labels[task] = load_labels(path, task).entries

    doc = {"cases": []}
    for case in manifest.cases:
        planes_doc = {}
        for plane in PLANES:
            vol = load_volume(manifest.files[case][plane], case, plane)
            rel_dir = f"cases/{case}/{plane}"
            (out / rel_dir).mkdir(parents=True, exist_ok=True)
            files = []
            for i in range(vol.slices):
                pixels = np.round(vol.data[i] * 255.0).astype(np.uint8)
                rel = f"{rel_dir}/{i}.png"
                Image.fromarray(pixels, mode="L").save(out / rel)
                files.append(rel)
            planes_doc[plane] = {"count": vol.slices, "files": files}
        case_doc = {"id": case, "planes": planes_doc,
                    "labels": {task: labels[task][case]
                               for task in labels if case in labels[task]}}
        case_preds = {task: pred_map[(case, task)]
                      for task in TASKS if (case, task) in pred_map}
        if case_preds:
            case_doc["predictions"] = case_preds
        doc["cases"].append(case_doc)
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    return doc
