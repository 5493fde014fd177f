"""Grid search over the augmentation probability p.

Trains one model per p in {0.00, 0.05, ..., 1.00} for every requested
(task, plane) cell, selects the argmax validation AUC (ties to the
smallest p), and writes a JSON report plus a text table of the chosen
percentages. Individual cell failures are recorded and skipped; the
search only fails if every cell failed.
"""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import KneeMriError, SearchError
from .metrics import auc, fit_logreg, plane_feature_matrix, predict_logreg, read_predictions
from .training import _records_for_checkpoint, train
from .volume_io import PLANES, load_labels, scan_dataset

P_GRID = tuple(round(i * 0.05, 2) for i in range(21))


def cell_seed(master_seed, task_index, plane_index, p_index) -> int:
    """Deterministic per-cell seed from (master seed, task, plane, p)."""
    ss = np.random.SeedSequence([master_seed, 3, task_index, plane_index, p_index])
    return int(ss.generate_state(1)[0])


def select_best(entries):
    """Argmax AUC over (p, auc) entries; ties choose the smallest p.

    Entries with a missing AUC (failed cells) are skipped. Returns
    (chosen_p, chosen_auc) or (None, None) when nothing succeeded.
    """
    chosen_p, chosen_auc = None, None
    for entry in entries:
        value = entry.get("auc")
        if value is None:
            continue
        if chosen_auc is None or value > chosen_auc:
            chosen_p, chosen_auc = entry["p"], value
    return chosen_p, chosen_auc


def _cells(base: RunConfig):
    """The (task_key, plane_key, tasks, planes) cells a config spans."""
    if base.config_id in ("c41", "c42"):
        return [(task, plane, (task,), (plane,))
                for task in base.tasks for plane in base.planes]
    if base.config_id == "c43":
        return [(task, "all", (task,), base.planes) for task in base.tasks]
    return [("multi", "all", base.tasks, base.planes)]


def _format_table(report) -> str:
    lines = ["Task        Plane       Data Augmentation Probability"]
    for task_key, planes in report["cells"].items():
        for plane_key, cell in planes.items():
            if cell["chosen_p"] is None:
                shown = "n/a"
            else:
                shown = f"{round(cell['chosen_p'] * 100)}%"
            lines.append(f"{task_key:<12}{plane_key:<12}{shown}")
    return "\n".join(lines) + "\n"


def grid_search(base: RunConfig, out_path=None) -> dict:
    """Sweep p over the 21-point grid for every cell of the base config."""
    out_dir = Path(base.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"p_grid": list(P_GRID), "cells": {}, "combined": {}}
    any_success = False
    chosen_checkpoints = {}
    for ti, (task_key, plane_key, tasks, planes) in enumerate(_cells(base)):
        entries = []
        for pi, p in enumerate(P_GRID):
            cell_dir = out_dir / "cells" / f"{task_key}-{plane_key}-p{pi:02d}"
            cfg = replace(
                base,
                tasks=tasks,
                planes=planes,
                augmentation=replace(base.augmentation, p=p),
                seed=cell_seed(base.seed, ti, PLANES.index(plane_key) if plane_key in PLANES else 3, pi),
                out_dir=str(cell_dir),
            )
            try:
                metrics = train(cfg)
                entries.append({"p": p, "auc": metrics["auc"]})
                any_success = True
            except (KneeMriError, ValueError) as exc:
                entries.append({"p": p, "auc": None, "error": str(exc)})
        chosen_p, chosen_auc = select_best(entries)
        report["cells"].setdefault(task_key, {})[plane_key] = {
            "entries": entries,
            "chosen_p": chosen_p,
            "chosen_auc": chosen_auc,
        }
        if chosen_p is not None:
            pi = P_GRID.index(chosen_p)
            chosen_checkpoints[(task_key, plane_key)] = (
                out_dir / "cells" / f"{task_key}-{plane_key}-p{pi:02d}")
    if not any_success:
        raise SearchError("every grid cell failed")

    if base.config_id in ("c41", "c42"):
        report["combined"] = _combined_auc(base, chosen_checkpoints)

    if out_path is not None:
        out_path = Path(out_path)
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(report, f, sort_keys=True, indent=2)
            f.write("\n")
        with open(out_path.with_suffix(".txt"), "w", encoding="utf-8") as f:
            f.write(_format_table(report))
    return report


def _combined_auc(base: RunConfig, chosen_checkpoints) -> dict:
    """Plane-ensemble AUC per task over the chosen per-plane winners.

    Only computed for tasks whose sweep covered all three planes; the
    combiner is fit on the winners' training-split prediction features.
    """
    combined = {}
    for task in base.tasks:
        if not all((task, plane) in chosen_checkpoints for plane in PLANES):
            continue
        fit_records, eval_records = [], []
        for plane in PLANES:
            cell_dir = chosen_checkpoints[(task, plane)]
            eval_records.extend(read_predictions(cell_dir / "predictions.csv"))
            _, train_recs, _, _ = _records_for_checkpoint(
                cell_dir / "checkpoint.ckpt", "train")
            fit_records.extend(train_recs)
        fit_cases, fit_X = plane_feature_matrix(fit_records, task)
        train_labels = load_labels(
            scan_dataset(base.data_root, "train").label_path(task), task).entries
        combiner = fit_logreg(fit_X, [train_labels[c] for c in fit_cases])
        eval_cases, eval_X = plane_feature_matrix(eval_records, task)
        valid_labels = load_labels(
            scan_dataset(base.data_root, "valid").label_path(task), task).entries
        scores = predict_logreg(combiner, eval_X)
        combined[task] = auc(scores, [valid_labels[c] for c in eval_cases])
    return combined
