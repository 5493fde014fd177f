"""Staged stochastic augmentation for MRI volumes.

A policy is four ordered stages, each applied with the same probability p:

  1. horizontal flip
  2. one of: random contrast, random gamma, random brightness
  3. one of: CLAHE, sharpen, emboss & overlay, random brightness-contrast
  4. one of: center crop, random crop (cropped slices are resized back)

In single-channel mode the members that assume three channels (random
brightness, CLAHE, random brightness-contrast) are dropped from their
stages. Sampling a policy yields a TransformPlan with every random
parameter frozen, and the plan is applied identically to every slice of
a volume so the stack stays geometrically coherent.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError
from .resample import resize_bilinear
from .volume_io import MriVolume

CHANNEL_MODES = ("three_channel", "single_channel")

_STAGE1 = ("horizontal_flip",)
_STAGE2_THREE = ("random_contrast", "random_gamma", "random_brightness")
_STAGE2_SINGLE = ("random_contrast", "random_gamma")
_STAGE3_THREE = ("clahe", "sharpen", "emboss_overlay", "random_brightness_contrast")
_STAGE3_SINGLE = ("sharpen", "emboss_overlay")
_STAGE4 = ("center_crop", "random_crop")
_EXTRAS = (("random_rotate",), ("pixel_shift",))

CLAHE_CLIP_LIMIT = 2.0
CLAHE_TILES = 8
CLAHE_BINS = 256

_EMBOSS_KERNEL = np.array([[-1.0, -1.0, 0.0],
                           [-1.0, 1.0, 1.0],
                           [0.0, 1.0, 1.0]])


@dataclass(frozen=True)
class AugmentationPolicy:
    """The staged policy with per-stage application probability p."""

    p: float = 0.5
    channel_mode: str = "three_channel"
    baseline_extras: bool = False
    crop_size: int = 150

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be >= 1")

    def stages(self):
        """Ordered stage member tuples, honoring the channel mode."""
        three = self.channel_mode == "three_channel"
        out = [
            _STAGE1,
            _STAGE2_THREE if three else _STAGE2_SINGLE,
            _STAGE3_THREE if three else _STAGE3_SINGLE,
            _STAGE4,
        ]
        if self.baseline_extras:
            out.extend(_EXTRAS)
        return out

    def to_json(self) -> str:
        return json.dumps({"p": self.p, "channel_mode": self.channel_mode,
                           "baseline_extras": self.baseline_extras,
                           "crop_size": self.crop_size}, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentationPolicy":
        allowed = {"p", "channel_mode", "baseline_extras", "crop_size"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationPolicy":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TransformSpec:
    """One concrete transform with all random parameters fixed."""

    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TransformPlan:
    """An ordered, fully deterministic realization of a policy draw."""

    transforms: tuple = ()


def _sample_params(kind, policy, rng):
    if kind == "horizontal_flip":
        return {}
    if kind == "random_contrast":
        return {"alpha": rng.uniform(-0.2, 0.2)}
    if kind == "random_gamma":
        return {"gamma": rng.uniform(0.8, 1.2)}
    if kind == "random_brightness":
        return {"beta": rng.uniform(-0.2, 0.2)}
    if kind == "clahe":
        return {}
    if kind == "sharpen":
        return {"amount": rng.uniform(0.2, 0.5)}
    if kind == "emboss_overlay":
        return {"strength": rng.uniform(0.2, 0.7), "alpha": rng.uniform(0.2, 0.5)}
    if kind == "random_brightness_contrast":
        return {"alpha": rng.uniform(-0.2, 0.2), "beta": rng.uniform(-0.2, 0.2)}
    if kind == "center_crop":
        return {"size": policy.crop_size}
    if kind == "random_crop":
        # Fractional offsets; apply maps them onto the valid integer
        # positions of the actual slice, so one plan fits any one volume.
        return {"size": policy.crop_size,
                "u_row": rng.random(), "u_col": rng.random()}
    if kind == "random_rotate":
        return {"angle_deg": rng.uniform(-25.0, 25.0)}
    if kind == "pixel_shift":
        return {"shift_row": int(rng.integers(-25, 26)),
                "shift_col": int(rng.integers(-25, 26))}
    raise ValueError(f"unknown transform kind {kind!r}")


def sample_plan(policy: AugmentationPolicy, rng: np.random.Generator) -> TransformPlan:
    """Draw one concrete plan: each stage fires independently with
    probability p; active multi-member stages pick a member uniformly."""
    transforms = []
    for members in policy.stages():
        if rng.random() >= policy.p:
            continue
        kind = members[0] if len(members) == 1 else members[int(rng.integers(len(members)))]
        transforms.append(TransformSpec(kind=kind, params=_sample_params(kind, policy, rng)))
    return TransformPlan(transforms=tuple(transforms))


# --- single-image transforms -------------------------------------------------

def _correlate3(image, kernel):
    """3x3 cross-correlation with replicate-edge padding."""
    h, w = image.shape
    padded = np.pad(image, 1, mode="edge")
    out = np.zeros_like(image)
    for ki in range(3):
        for kj in range(3):
            out += kernel[ki, kj] * padded[ki:ki + h, kj:kj + w]
    return out


def _horizontal_flip(image, params):
    return image[:, ::-1].copy()


def _random_contrast(image, params):
    mu = image.mean()
    return np.clip(mu + (1.0 + params["alpha"]) * (image - mu), 0.0, 1.0)


def _random_gamma(image, params):
    return np.clip(np.power(image, params["gamma"]), 0.0, 1.0)


def _random_brightness(image, params):
    return np.clip(image * (1.0 + params["beta"]), 0.0, 1.0)


def _clahe(image, params):
    """Contrast-limited adaptive histogram equalization.

    Per-tile histograms clipped at CLAHE_CLIP_LIMIT times the uniform bin
    height, clipped excess redistributed evenly, and the per-tile CDF
    mappings blended bilinearly between tile centers.
    """
    h, w = image.shape
    tiles_r = min(CLAHE_TILES, h)
    tiles_c = min(CLAHE_TILES, w)
    bins = CLAHE_BINS
    bin_idx = np.minimum((image * bins).astype(np.intp), bins - 1)
    row_edges = np.round(np.linspace(0, h, tiles_r + 1)).astype(int)
    col_edges = np.round(np.linspace(0, w, tiles_c + 1)).astype(int)
    luts = np.empty((tiles_r, tiles_c, bins), dtype=image.dtype)
    for ti in range(tiles_r):
        for tj in range(tiles_c):
            tile = bin_idx[row_edges[ti]:row_edges[ti + 1],
                           col_edges[tj]:col_edges[tj + 1]]
            n_pix = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            limit = CLAHE_CLIP_LIMIT * n_pix / bins
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / bins
            luts[ti, tj] = np.cumsum(hist) / n_pix
    centers_r = (row_edges[:-1] + row_edges[1:]) / 2.0
    centers_c = (col_edges[:-1] + col_edges[1:]) / 2.0
    tr = np.interp(np.arange(h) + 0.5, centers_r, np.arange(tiles_r, dtype=np.float64))
    tc = np.interp(np.arange(w) + 0.5, centers_c, np.arange(tiles_c, dtype=np.float64))
    r0 = np.floor(tr).astype(np.intp)
    c0 = np.floor(tc).astype(np.intp)
    r1 = np.minimum(r0 + 1, tiles_r - 1)
    c1 = np.minimum(c0 + 1, tiles_c - 1)
    fr = (tr - r0)[:, None]
    fc = (tc - c0)[None, :]
    rr0, rr1 = r0[:, None], r1[:, None]
    cc0, cc1 = c0[None, :], c1[None, :]
    out = ((1 - fr) * (1 - fc) * luts[rr0, cc0, bin_idx]
           + (1 - fr) * fc * luts[rr0, cc1, bin_idx]
           + fr * (1 - fc) * luts[rr1, cc0, bin_idx]
           + fr * fc * luts[rr1, cc1, bin_idx])
    return np.clip(out, 0.0, 1.0)


def _sharpen(image, params):
    box = _correlate3(image, np.full((3, 3), 1.0 / 9.0))
    return np.clip(image + params["amount"] * (image - box), 0.0, 1.0)


def _emboss_overlay(image, params):
    embossed = np.clip(_correlate3(image, params["strength"] * _EMBOSS_KERNEL) + 0.5,
                       0.0, 1.0)
    a = params["alpha"]
    return np.clip((1.0 - a) * image + a * embossed, 0.0, 1.0)


def _random_brightness_contrast(image, params):
    return np.clip((1.0 + params["alpha"]) * (image - 0.5) + 0.5 + params["beta"],
                   0.0, 1.0)


def _crop_window(image, size, r0, c0):
    h, w = image.shape
    crop = image[r0:r0 + size, c0:c0 + size]
    return resize_bilinear(crop, h, w)


def _center_crop(image, params):
    size = params["size"]
    h, w = image.shape
    if size > h or size > w:
        raise GeometryError(f"crop {size} exceeds slice shape {(h, w)}")
    return _crop_window(image, size, (h - size) // 2, (w - size) // 2)


def _random_crop(image, params):
    size = params["size"]
    h, w = image.shape
    if size > h or size > w:
        raise GeometryError(f"crop {size} exceeds slice shape {(h, w)}")
    r0 = int(params["u_row"] * (h - size + 1))
    c0 = int(params["u_col"] * (w - size + 1))
    return _crop_window(image, size, min(r0, h - size), min(c0, w - size))


def _random_rotate(image, params):
    """Rotate about the image center, bilinear sampling, zero fill."""
    h, w = image.shape
    theta = math.radians(params["angle_deg"])
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    src_r = cos_t * rr + sin_t * cc + cy
    src_c = -sin_t * rr + cos_t * cc + cx
    inside = (src_r >= 0) & (src_r <= h - 1) & (src_c >= 0) & (src_c <= w - 1)
    src_r = np.clip(src_r, 0.0, h - 1.0)
    src_c = np.clip(src_c, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.intp)
    c0 = np.floor(src_c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = src_r - r0
    fc = src_c - c0
    out = ((1 - fr) * (1 - fc) * image[r0, c0] + (1 - fr) * fc * image[r0, c1]
           + fr * (1 - fc) * image[r1, c0] + fr * fc * image[r1, c1])
    return np.clip(np.where(inside, out, 0.0), 0.0, 1.0)


def _pixel_shift(image, params):
    """Integer pixel shift with zero fill outside the frame."""
    h, w = image.shape
    dr, dc = params["shift_row"], params["shift_col"]
    out = np.zeros_like(image)
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    if src_r.stop > src_r.start and src_c.stop > src_c.start:
        out[dst_r, dst_c] = image[src_r, src_c]
    return out


_TRANSFORMS = {
    "horizontal_flip": _horizontal_flip,
    "random_contrast": _random_contrast,
    "random_gamma": _random_gamma,
    "random_brightness": _random_brightness,
    "clahe": _clahe,
    "sharpen": _sharpen,
    "emboss_overlay": _emboss_overlay,
    "random_brightness_contrast": _random_brightness_contrast,
    "center_crop": _center_crop,
    "random_crop": _random_crop,
    "random_rotate": _random_rotate,
    "pixel_shift": _pixel_shift,
}


def apply_transform(image: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply one concrete transform to a single H x W slice in [0, 1]."""
    try:
        fn = _TRANSFORMS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown transform kind {spec.kind!r}") from None
    return fn(image, spec.params)


def apply_plan(vol: MriVolume, plan: TransformPlan) -> MriVolume:
    """Apply a plan to every slice of a volume with identical parameters.

    An empty plan returns the volume unchanged, bit for bit.
    """
    if not plan.transforms:
        return vol
    data = vol.data
    for spec in plan.transforms:
        data = np.stack([apply_transform(data[i], spec) for i in range(data.shape[0])])
    return MriVolume(case_id=vol.case_id, plane=vol.plane, data=data,
                     resliced=vol.resliced)


def augment_volume(vol: MriVolume, policy: AugmentationPolicy,
                   rng: np.random.Generator) -> MriVolume:
    """Sample one plan from the policy and apply it to the whole volume."""
    return apply_plan(vol, sample_plan(policy, rng))


def single_channel_policy(policy: AugmentationPolicy) -> AugmentationPolicy:
    """The same policy with the three-channel-only members removed."""
    return replace(policy, channel_mode="single_channel")
