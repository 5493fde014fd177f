"""Rank-based AUC, class weighting, and the per-task plane ensemble.

The ensemble is a 3-input logistic regression over the axial, coronal
and sagittal probabilities, fit by Newton iterations with a small ridge
on the weights (never the bias).
"""

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabelsError, UndefinedAucError
from .nn.loss import sigmoid
from .volume_io import PLANES


@dataclass(frozen=True)
class PredictionRecord:
    """One model probability for a (case, task, plane) triple."""

    case_id: str
    task: str
    plane: str
    probability: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights w_c = N / (2 * N_c)."""

    w_pos: float
    w_neg: float

    def for_label(self, label):
        return self.w_pos if label == 1 else self.w_neg


@dataclass
class CombinerModel:
    """Logistic regression over (axial, coronal, sagittal) probabilities."""

    weights: np.ndarray
    bias: float
    lam: float = 1e-4

    def to_json(self) -> str:
        return json.dumps({"weights": [float(w) for w in self.weights],
                           "bias": float(self.bias), "lambda": self.lam},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CombinerModel":
        doc = json.loads(text)
        return cls(weights=np.asarray(doc["weights"], dtype=np.float64),
                   bias=float(doc["bias"]), lam=float(doc.get("lambda", 1e-4)))


def _check_binary(labels):
    y = np.asarray(labels)
    if y.size == 0 or not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be a non-empty 0/1 array")
    return y.astype(np.float64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks for ties.

    AUC = (sum of positive ranks - n_pos*(n_pos+1)/2) / (n_pos * n_neg).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    starts_new = np.r_[True, ss[1:] != ss[:-1]]
    group = np.cumsum(starts_new) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    mid = ends - (counts - 1) / 2.0
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = mid[group]
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pair_count(scores, labels) -> float:
    """O(n_pos * n_neg) pair-counting AUC; the independent oracle for auc()."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    pos = s[y == 1]
    neg = s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAucError("AUC needs at least one positive and one negative")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def class_weights(labels) -> ClassWeights:
    """w_c = N / (2 * N_c); the weighted positives and negatives then each
    sum to N / 2."""
    y = _check_binary(labels)
    n = y.size
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("class weights need both classes present")
    return ClassWeights(w_pos=n / (2.0 * n_pos), w_neg=n / (2.0 * n_neg))


def _logreg_objective(theta, X, y, lam):
    z = X @ theta
    nll = np.sum(np.maximum(z, 0) - y * z + np.log1p(np.exp(-np.abs(z))))
    return nll + 0.5 * lam * np.sum(theta[:-1] ** 2)


def fit_logreg(features, labels, lam: float = 1e-4) -> CombinerModel:
    """Newton (IRLS) fit of the 3-feature combiner from zero initialization.

    Minimizes the ridge-penalized negative log-likelihood (penalty on the
    weights only) to gradient norm < 1e-8 or 100 iterations; issues a
    convergence warning and returns the partial model otherwise.
    """
    X = np.asarray(features, dtype=np.float64)
    y = _check_binary(labels)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"expected n x 3 plane probabilities, got {X.shape}")
    if X.shape[0] != y.size or X.shape[0] < 4:
        raise ValueError("need at least 4 examples with matching labels")
    if y.sum() == 0 or y.sum() == y.size:
        raise DegenerateLabelsError("combiner fit needs both classes present")
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    theta = np.zeros(4)
    reg_mask = np.array([1.0, 1.0, 1.0, 0.0])
    converged = False
    for _ in range(100):
        p = sigmoid(Xb @ theta)
        grad = Xb.T @ (p - y) + lam * reg_mask * theta
        if np.linalg.norm(grad) < 1e-8:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = Xb.T @ (Xb * w[:, None]) + lam * np.diag(reg_mask)
        theta = theta - np.linalg.solve(hess, grad)
    else:
        p = sigmoid(Xb @ theta)
        grad = Xb.T @ (p - y) + lam * reg_mask * theta
        converged = np.linalg.norm(grad) < 1e-8
    if not converged:
        warnings.warn("combiner fit did not reach gradient norm < 1e-8 in 100 "
                      "Newton iterations; returning the partial model")
    return CombinerModel(weights=theta[:3].copy(), bias=float(theta[3]), lam=lam)


def predict_logreg(model: CombinerModel, features) -> np.ndarray | float:
    """sigmoid(w . x + b) for one (3,) feature row or an (n, 3) matrix."""
    X = np.asarray(features, dtype=np.float64)
    z = X @ np.asarray(model.weights, dtype=np.float64) + model.bias
    out = sigmoid(z)
    return float(out) if np.isscalar(z) or z.ndim == 0 else out


def combiner_gradient_norm(model: CombinerModel, features, labels) -> float:
    """Gradient norm of the fit objective at the model (stopping check)."""
    X = np.asarray(features, dtype=np.float64)
    y = _check_binary(labels)
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    theta = np.r_[model.weights, model.bias]
    p = sigmoid(Xb @ theta)
    grad = Xb.T @ (p - y) + model.lam * np.r_[model.weights, 0.0]
    return float(np.linalg.norm(grad))


def write_predictions(path, records) -> None:
    """CSV of case_id,task,plane,probability rows, sorted for determinism."""
    rows = sorted(records, key=lambda r: (r.case_id, r.task, r.plane))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for r in rows:
            writer.writerow([r.case_id, r.task, r.plane, repr(r.probability)])


def read_predictions(path):
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row:
                continue
            records.append(PredictionRecord(case_id=row[0], task=row[1],
                                            plane=row[2], probability=float(row[3])))
    return records


def plane_feature_matrix(records, task):
    """Assemble per-case (axial, coronal, sagittal) probability rows.

    Returns (case_ids, n x 3 matrix); cases missing any plane are skipped.
    """
    by_case = {}
    for r in records:
        if r.task == task and r.plane in PLANES:
            by_case.setdefault(r.case_id, {})[r.plane] = r.probability
    case_ids = sorted(c for c, planes in by_case.items() if len(planes) == 3)
    feats = np.array([[by_case[c][p] for p in PLANES] for c in case_ids],
                     dtype=np.float64)
    return case_ids, feats
