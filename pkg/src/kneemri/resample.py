"""Slice-count normalization and 2D resizing.

Variable slice counts are mapped onto a fixed count with box-overlap
weights: output cell j covers ``[j*n/m, (j+1)*n/m)`` on the source axis
and draws from each source slice in proportion to the overlap of that
span with the slice's unit cell. Downsampling 5 slices to 4 therefore
builds the first output from 80% of slice 0 plus 20% of slice 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import WindowError
from .volume_io import MriVolume

RESLICE_AXES = ("none", "horizontal")
RESAMPLE_MODES = ("interpolate", "middle_window")


@dataclass(frozen=True)
class InterpolationMatrix:
    """Row-stochastic M x N weights mapping N source slices to M outputs."""

    n_source: int
    n_target: int
    weights: np.ndarray


@dataclass(frozen=True)
class ResampleSpec:
    """How to normalize a volume's slice count before training.

    target_count defaults to 15 for interpolation and 17 (the dataset
    minimum) for the middle-slice window.
    """

    mode: str = "interpolate"
    target_count: int | None = None
    reslice_axis: str = "none"

    def __post_init__(self):
        if self.mode not in RESAMPLE_MODES:
            raise ValueError(f"unknown resample mode {self.mode!r}")
        if self.reslice_axis not in RESLICE_AXES:
            raise ValueError(f"unknown reslice axis {self.reslice_axis!r}")
        if self.target_count is None:
            object.__setattr__(self, "target_count",
                               15 if self.mode == "interpolate" else 17)
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")


def interpolation_matrix(n: int, m: int) -> InterpolationMatrix:
    """Box-overlap weights turning n source slices into m output slices."""
    if n < 1 or m < 1:
        raise ValueError(f"counts must be >= 1, got n={n}, m={m}")
    j = np.arange(m, dtype=np.float64)
    starts = j * n / m
    stops = (j + 1.0) * n / m
    i = np.arange(n, dtype=np.float64)
    overlap = np.minimum(stops[:, None], i + 1.0) - np.maximum(starts[:, None], i)
    weights = np.maximum(overlap, 0.0) * (m / n)
    return InterpolationMatrix(n_source=n, n_target=m, weights=weights)


def resample_volume(vol: MriVolume, m: int) -> MriVolume:
    """Return a volume with exactly m slices via box-overlap interpolation."""
    mat = interpolation_matrix(vol.slices, m)
    data = np.tensordot(mat.weights, vol.data, axes=(1, 0))
    data = np.clip(data, 0.0, 1.0)
    return MriVolume(case_id=vol.case_id, plane=vol.plane, data=data,
                     resliced=vol.resliced)


def middle_slices(vol: MriVolume, k: int) -> MriVolume:
    """Keep the centered window of k slices; start index floors, so the
    extra discarded slice sits at the end when s - k is odd."""
    if k < 1:
        raise ValueError("window size must be >= 1")
    if k > vol.slices:
        raise WindowError(f"window of {k} exceeds {vol.slices} available slices")
    start = (vol.slices - k) // 2
    return MriVolume(case_id=vol.case_id, plane=vol.plane,
                     data=vol.data[start:start + k].copy(), resliced=vol.resliced)


def reslice_horizontal(vol: MriVolume) -> MriVolume:
    """Re-cut the stack along image rows: out[h][i][w] = in[i][h][w].

    Produces ``height`` slices of shape (s, width). Applying it twice
    restores the original stack.
    """
    data = np.ascontiguousarray(vol.data.transpose(1, 0, 2))
    return MriVolume(case_id=vol.case_id, plane=vol.plane, data=data,
                     resliced=not vol.resliced)


def _axis_coords(n_in: int, n_out: int):
    """Half-pixel-centered source coordinates for each output index."""
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1.0)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel center alignment, clipped to [0, 1]."""
    if image.ndim != 2:
        raise ValueError("resize_bilinear expects a 2-d image")
    if out_h < 1 or out_w < 1:
        raise ValueError("output sizes must be >= 1")
    if image.shape == (out_h, out_w):
        return image.copy()
    r0, r1, fr = _axis_coords(image.shape[0], out_h)
    c0, c1, fc = _axis_coords(image.shape[1], out_w)
    top = image[np.ix_(r0, c0)] * (1.0 - fc) + image[np.ix_(r0, c1)] * fc
    bot = image[np.ix_(r1, c0)] * (1.0 - fc) + image[np.ix_(r1, c1)] * fc
    out = top * (1.0 - fr)[:, None] + bot * fr[:, None]
    return np.clip(out, 0.0, 1.0)


def resize_stack(stack: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear-resize every slice of an (s, H, W) stack."""
    if stack.shape[1:] == (out_h, out_w):
        return stack.copy()
    r0, r1, fr = _axis_coords(stack.shape[1], out_h)
    c0, c1, fc = _axis_coords(stack.shape[2], out_w)
    top = stack[:, r0][:, :, c0] * (1.0 - fc) + stack[:, r0][:, :, c1] * fc
    bot = stack[:, r1][:, :, c0] * (1.0 - fc) + stack[:, r1][:, :, c1] * fc
    out = top * (1.0 - fr)[None, :, None] + bot * fr[None, :, None]
    return np.clip(out, 0.0, 1.0)


def apply_resample(vol: MriVolume, spec: ResampleSpec) -> MriVolume:
    """Run a full ResampleSpec: optional horizontal re-slice, then slice-count
    normalization by the chosen mode."""
    if spec.reslice_axis == "horizontal":
        vol = reslice_horizontal(vol)
    if spec.mode == "interpolate":
        return resample_volume(vol, spec.target_count)
    return middle_slices(vol, spec.target_count)
