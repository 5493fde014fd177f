"""Training, checkpoint retention, and evaluation for the four run modes.

One training run owns a model, an Adam state, and seeded generator
streams derived from (seed, purpose, epoch, case, plane), so a run is a
pure function of (seed, config, dataset bytes). Augmentation touches
training volumes only; the checkpoint with the lowest validation loss is
retained.
"""

import json
from pathlib import Path

import numpy as np

from .augment import augment_volume
from .config import RunConfig, run_config_from_dict, run_config_to_dict
from .errors import ConfigError, UndefinedAucError
from .metrics import (
    PredictionRecord,
    auc,
    class_weights,
    combiner_gradient_norm,
    fit_logreg,
    plane_feature_matrix,
    predict_logreg,
    write_predictions,
)
from .nn import Adam, init_model, load_checkpoint, save_checkpoint
from .nn.loss import sigmoid, weighted_bce
from .resample import apply_resample, resize_stack
from .volume_io import PLANES, load_labels, load_volume, scan_dataset

# Test instrumentation: callables invoked as hook(split, case_id) right
# before a volume is augmented.
AUGMENT_HOOKS = []


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


class _VolumeCache:
    """Resampled, float32 volumes keyed by (split, case, plane)."""

    def __init__(self, run: RunConfig, manifests: dict):
        self.run = run
        self.manifests = manifests
        self._store = {}

    def volume(self, split, case, plane):
        key = (split, case, plane)
        if key not in self._store:
            vol = load_volume(self.manifests[split].files[case][plane], case, plane)
            if self.run.resample is not None:
                vol = apply_resample(vol, self.run.resample)
            vol.data = vol.data.astype(np.float32)
            self._store[key] = vol
        return self._store[key]


def _augment_for_training(vol, policy, rng, split, case):
    for hook in AUGMENT_HOOKS:
        hook(split, case)
    return augment_volume(vol, policy, rng)


def _case_stacks(cache, split, case, run, epoch=None):
    """Per-plane (s, input, input) stacks for a case; augmented when an
    epoch number is given (training path)."""
    size = run.model.input_size
    stacks = []
    for plane in run.planes:
        vol = cache.volume(split, case, plane)
        if epoch is not None:
            case_index = cache.manifests[split].cases.index(case)
            rng = _rng(run.seed, 2, epoch, case_index, PLANES.index(plane))
            vol = _augment_for_training(vol, run.augmentation, rng, split, case)
        stacks.append(resize_stack(vol.data, size, size).astype(np.float32))
    return stacks


def _model_input(stacks, run):
    """Channel-prepare one case: (s, C, H, W) for per-slice modes, or
    (1, 45, H, W) for the stacked-plane modes."""
    if run.config_id == "c41":
        return np.repeat(stacks[0][:, None, :, :], 3, axis=1)
    if run.config_id == "c42":
        return stacks[0][:, None, :, :]
    ordered = [stacks[run.planes.index(p)] for p in PLANES]
    return np.concatenate(ordered, axis=0)[None, :, :, :]


def _task_weights(run, label_tables):
    weights = {}
    for task in run.tasks:
        labels = [label_tables[task]["train"][c]
                  for c in label_tables["_train_cases"]]
        weights[task] = class_weights(labels)
    return weights


def _case_logit_max(model, x):
    """Per-exam logit for the max-over-slices modes plus the argmax slice."""
    logits = model.forward(x, train=False)[:, 0]
    k = int(np.argmax(logits))
    return logits[k], k


def _forward_eval_probability(model, run, x):
    """Eval-mode per-task probabilities for one prepared case input."""
    if run.config_id in ("c41", "c42"):
        z, _ = _case_logit_max(model, x)
        return np.array([float(sigmoid(z))]), np.array([z])
    logits = model.forward(x, train=False)[0]
    return sigmoid(logits), logits


def _evaluate_split(model, run, cache, split, label_tables, weights):
    """Mean weighted validation loss, per-task AUC, and prediction records."""
    manifest = cache.manifests[split]
    plane_tag = run.planes[0] if run.config_id in ("c41", "c42") else "all"
    records = []
    losses = []
    scores = {task: [] for task in run.tasks}
    labels = {task: [] for task in run.tasks}
    for case in manifest.cases:
        x = _model_input(_case_stacks(cache, split, case, run), run)
        probs, logits = _forward_eval_probability(model, run, x)
        case_loss = 0.0
        for ti, task in enumerate(run.tasks):
            y = label_tables[task][split][case]
            w = weights[task].for_label(y)
            loss, _ = weighted_bce(logits[ti], y, w)
            case_loss += float(loss)
            records.append(PredictionRecord(case_id=case, task=task,
                                            plane=plane_tag,
                                            probability=float(probs[ti])))
            scores[task].append(float(probs[ti]))
            labels[task].append(y)
        losses.append(case_loss)
    per_task_auc = {}
    for task in run.tasks:
        try:
            per_task_auc[task] = auc(scores[task], labels[task])
        except UndefinedAucError:
            per_task_auc[task] = None
    return float(np.mean(losses)), per_task_auc, records


def _train_step_max(model, opt, batch_inputs, ys, ws):
    """One step of the per-slice modes: exam logit = max slice logit,
    gradient routed through the argmax slice only."""
    counts = [x.shape[0] for x in batch_inputs]
    x = np.concatenate(batch_inputs, axis=0)
    logits = model.forward(x, train=True)[:, 0]
    offsets = np.cumsum([0] + counts)
    zs, ks = [], []
    for i in range(len(batch_inputs)):
        seg = logits[offsets[i]:offsets[i + 1]]
        k = int(np.argmax(seg))
        ks.append(offsets[i] + k)
        zs.append(seg[k])
    losses, dz = weighted_bce(np.array(zs), np.array(ys), np.array(ws))
    dlogits = np.zeros((logits.size, 1))
    dlogits[ks, 0] = dz / len(batch_inputs)
    model.zero_grads()
    model.backward(dlogits)
    opt.step()
    return float(np.mean(losses))


def _train_step_stacked(model, opt, batch_inputs, ys, ws):
    """One step of the stacked-channel modes; multi-task losses sum."""
    x = np.concatenate(batch_inputs, axis=0)
    logits = model.forward(x, train=True)
    losses, dz = weighted_bce(logits, np.asarray(ys), np.asarray(ws))
    model.zero_grads()
    model.backward(dz / x.shape[0])
    opt.step()
    return float(np.mean(losses.sum(axis=1)))


def train(run: RunConfig) -> dict:
    """Run a full training job; writes checkpoint.ckpt, predictions.csv and
    metrics.json under run.out_dir and returns the metrics dict."""
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {split: scan_dataset(run.data_root, split)
                 for split in ("train", "valid")}
    cache = _VolumeCache(run, manifests)
    label_tables = {}
    for task in run.tasks:
        label_tables[task] = {
            split: load_labels(manifests[split].label_path(task), task).entries
            for split in ("train", "valid")
        }
    label_tables["_train_cases"] = manifests["train"].cases
    weights = _task_weights(run, label_tables)

    model = init_model(run.model, _rng(run.seed, 0))
    opt = Adam(model.params(), lr=run.optimizer.learning_rate,
               beta1=run.optimizer.beta1, beta2=run.optimizer.beta2,
               eps=run.optimizer.epsilon, weight_decay=run.optimizer.weight_decay)

    best = None  # (loss, epoch, snapshot, per_task_auc, records)
    train_cases = manifests["train"].cases
    for epoch in range(1, run.epochs + 1):
        order = list(train_cases)
        _rng(run.seed, 1, epoch).shuffle(order)
        for start in range(0, len(order), run.batch_size):
            chunk = order[start:start + run.batch_size]
            inputs, ys, ws = [], [], []
            for case in chunk:
                stacks = _case_stacks(cache, "train", case, run, epoch=epoch)
                inputs.append(_model_input(stacks, run))
                y_row = [label_tables[task]["train"][case] for task in run.tasks]
                w_row = [weights[task].for_label(y) for task, y in zip(run.tasks, y_row)]
                if run.config_id in ("c41", "c42"):
                    ys.append(y_row[0])
                    ws.append(w_row[0])
                else:
                    ys.append(y_row)
                    ws.append(w_row)
            if run.config_id in ("c41", "c42"):
                _train_step_max(model, opt, inputs, ys, ws)
            else:
                _train_step_stacked(model, opt, inputs, ys, ws)
        vloss, vauc, vrecords = _evaluate_split(model, run, cache, "valid",
                                                label_tables, weights)
        if best is None or vloss < best[0]:
            best = (vloss, epoch, model.snapshot(), vauc, vrecords)

    if best is None:  # zero epochs: the initialization is the checkpoint
        vloss, vauc, vrecords = _evaluate_split(model, run, cache, "valid",
                                                label_tables, weights)
        best = (vloss, 0, model.snapshot(), vauc, vrecords)

    model.load_state_arrays(best[2])
    meta = {"run": run_config_to_dict(run), "best_epoch": best[1]}
    save_checkpoint(out_dir / "checkpoint.ckpt", model, meta)
    write_predictions(out_dir / "predictions.csv", best[4])

    per_task = best[3]
    aucs = [a for a in per_task.values() if a is not None]
    metrics = {
        "task": run.tasks[0] if len(run.tasks) == 1 else "multi",
        "plane": run.planes[0] if run.config_id in ("c41", "c42") else "all",
        "auc": float(np.mean(aucs)) if aucs else None,
        "epochs": run.epochs,
        "best_epoch": best[1],
        "valid_loss": best[0],
    }
    if len(run.tasks) > 1:
        metrics["per_task_auc"] = per_task
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
        json.dump(metrics, f, sort_keys=True, indent=2)
        f.write("\n")
    return metrics


def _records_for_checkpoint(checkpoint_path, split, data_root=None):
    model, meta = load_checkpoint(checkpoint_path)
    doc = dict(meta["run"])
    if data_root is not None:
        doc["data_root"] = str(data_root)
    run = run_config_from_dict(doc)
    manifests = {split: scan_dataset(run.data_root, split)}
    cache = _VolumeCache(run, manifests)
    label_tables = {task: {split: load_labels(manifests[split].label_path(task),
                                              task).entries}
                    for task in run.tasks}
    manifest = manifests[split]
    plane_tag = run.planes[0] if run.config_id in ("c41", "c42") else "all"
    records, scores, labels = [], {t: [] for t in run.tasks}, {t: [] for t in run.tasks}
    for case in manifest.cases:
        x = _model_input(_case_stacks(cache, split, case, run), run)
        probs, _ = _forward_eval_probability(model, run, x)
        for ti, task in enumerate(run.tasks):
            records.append(PredictionRecord(case_id=case, task=task, plane=plane_tag,
                                            probability=float(probs[ti])))
            scores[task].append(float(probs[ti]))
            labels[task].append(label_tables[task][split][case])
    return run, records, scores, labels


def evaluate(checkpoint_path, split: str = "valid", data_root=None,
             combine=None, lam: float = 1e-4) -> dict:
    """Evaluate one checkpoint, or an axial/coronal/sagittal checkpoint
    triple plus the logistic-regression combiner.

    With ``combine`` (three checkpoint paths in axial, coronal, sagittal
    order) the combiner is fit on training-split predictions and the
    report carries per-plane and combined AUCs for the requested split.
    """
    if combine is None:
        run, records, scores, labels = _records_for_checkpoint(
            checkpoint_path, split, data_root)
        per_task = {}
        for task in run.tasks:
            try:
                per_task[task] = auc(scores[task], labels[task])
            except UndefinedAucError:
                per_task[task] = None
        aucs = [a for a in per_task.values() if a is not None]
        report = {
            "task": run.tasks[0] if len(run.tasks) == 1 else "multi",
            "plane": run.planes[0] if run.config_id in ("c41", "c42") else "all",
            "split": split,
            "auc": float(np.mean(aucs)) if aucs else None,
        }
        if len(run.tasks) > 1:
            report["per_task_auc"] = per_task
        return report

    if len(combine) != 3:
        raise ConfigError("--combine needs axial, coronal and sagittal checkpoints")
    paths = {"axial": combine[0], "coronal": combine[1], "sagittal": combine[2]}
    task = None
    root = None
    fit_records, eval_records = [], []
    plane_auc = {}
    for plane in PLANES:
        run_p, recs, scores, labels = _records_for_checkpoint(paths[plane], split,
                                                              data_root)
        if run_p.config_id not in ("c41", "c42") or run_p.planes[0] != plane:
            raise ConfigError(f"checkpoint for {plane} was trained on "
                              f"{run_p.planes} with {run_p.config_id}")
        if task is None:
            task, root = run_p.tasks[0], run_p.data_root
        elif task != run_p.tasks[0]:
            raise ConfigError("combine checkpoints must share one task")
        plane_auc[plane] = auc(scores[task], labels[task])
        eval_records.extend(recs)
        _, train_recs, _, _ = _records_for_checkpoint(paths[plane], "train", data_root)
        fit_records.extend(train_recs)

    fit_cases, fit_X = plane_feature_matrix(fit_records, task)
    train_manifest = scan_dataset(root, "train")
    fit_labels = load_labels(train_manifest.label_path(task), task).entries
    fit_y = [fit_labels[c] for c in fit_cases]
    combiner = fit_logreg(fit_X, fit_y, lam=lam)

    eval_cases, eval_X = plane_feature_matrix(eval_records, task)
    eval_manifest = scan_dataset(root, split)
    eval_labels = load_labels(eval_manifest.label_path(task), task).entries
    eval_y = [eval_labels[c] for c in eval_cases]
    combined_scores = predict_logreg(combiner, eval_X)
    report = {
        "task": task,
        "split": split,
        "planes": plane_auc,
        "combined": auc(combined_scores, eval_y),
        "combiner": json.loads(combiner.to_json()),
        "combiner_gradient_norm": combiner_gradient_norm(combiner, fit_X, fit_y),
    }
    return report
