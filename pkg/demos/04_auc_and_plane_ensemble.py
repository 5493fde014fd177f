"""Rank-based AUC and the three-plane logistic-regression ensemble.

AUC is the probability that a random positive outranks a random negative;
the implementation uses mid-ranked Mann-Whitney statistics and matches
brute-force pair counting exactly. The ensemble maps the per-plane
probabilities of one exam to a single combined probability.
"""

import numpy as np

from kneemri import auc, auc_pair_count, class_weights, fit_logreg, predict_logreg

scores = [0.1, 0.4, 0.35, 0.8]
labels = [0, 0, 1, 1]
print("hand case:", scores, labels, "-> AUC", auc(scores, labels))
print("pair-counting oracle agrees:", auc_pair_count(scores, labels))

# Class weights balance an imbalanced task: weighted positives and weighted
# negatives each contribute half the total mass.
labels_imbalanced = [1] * 1104 + [0] * 266
w = class_weights(labels_imbalanced)
print(f"\n1104/1370 positives -> w_pos {w.w_pos:.4f}, w_neg {w.w_neg:.4f}")
print("balance:", 1104 * w.w_pos, "=", 266 * w.w_neg)

# Simulate per-plane probabilities with different signal quality per plane,
# then fit the combiner and compare against the single planes.
rng = np.random.default_rng(5)
n = 600
y = rng.integers(0, 2, n)
noise = (0.2, 0.35, 0.5)
X = np.column_stack([np.clip(0.25 + 0.5 * y + rng.normal(0, s, n), 0, 1)
                     for s in noise])
model = fit_logreg(X[:300], y[:300], lam=1e-4)
print("\ncombiner weights (axial, coronal, sagittal):",
      np.round(model.weights, 2), "bias", round(model.bias, 2))

combined = auc(predict_logreg(model, X[300:]), y[300:])
singles = [auc(X[300:, i], y[300:]) for i in range(3)]
print("held-out per-plane AUCs:", [round(a, 3) for a in singles])
print("held-out combined AUC:  ", round(combined, 3))
