"""Slice-count normalization by box-overlap interpolation.

MRI exams carry anywhere from 17 to 61 slices per plane, but a fixed-count
network needs the same number from everyone. Each output slice covers an
equal span of the source axis and blends the source slices it overlaps.
"""

import numpy as np

from kneemri import MriVolume, interpolation_matrix, middle_slices, resample_volume

# The 5 -> 4 weight matrix: the first output is 80% slice 0 plus 20% slice 1.
mat = interpolation_matrix(5, 4)
print("5 source slices -> 4 outputs, one row per output slice:")
for row in mat.weights:
    print("   ", np.array2string(row, precision=2, suppress_small=True))

print("\nEvery row is a convex combination (sums to 1):", mat.weights.sum(axis=1))

# Upsampling duplicates whole slices when an output span falls inside one cell.
up = interpolation_matrix(2, 4)
print("\n2 -> 4 (upsampling):")
for row in up.weights:
    print("   ", row)

# Apply to a toy volume whose slices are constant planes 0.0, 0.1, ... so the
# blending shows up directly in the output values.
s = 9
data = np.broadcast_to(np.linspace(0.0, 0.8, s)[:, None, None], (s, 4, 4)).copy()
vol = MriVolume(case_id="demo", plane="axial", data=data)
out = resample_volume(vol, 5)
print(f"\nPer-slice means after resampling {s} -> 5:",
      np.round(out.data.mean(axis=(1, 2)), 3))

# The alternative: keep only the centered window of slices.
mid = middle_slices(vol, 5)
print("Middle-window means (5 of 9):", np.round(mid.data.mean(axis=(1, 2)), 3))
