"""Volume and label I/O for knee MRI datasets.

A dataset root holds ``{train,valid}/{axial,coronal,sagittal}/<case_id>.npy``
stacks plus per-task label CSVs (``<split>-<task>.csv``). Volumes are
normalized to floats in [0, 1] at load time so every downstream transform
works on a single numeric domain: uint8 sources divide by 255, float
sources are clipped.
"""

import ast
import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DtypeError,
    FormatError,
    IntegrityError,
    LayoutError,
    ParseError,
    ShapeError,
)

PLANES = ("axial", "coronal", "sagittal")
TASKS = ("acl", "meniscus", "abnormal")

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_DESCRS = {"|u1": np.uint8, "<f4": np.float32, "<f8": np.float64}


@dataclass
class MriVolume:
    """One exam's stack of 2D slices for a single imaging plane.

    ``data`` has shape (slices, height, width) with every intensity in
    [0, 1]. ``resliced`` records whether the stack has been re-cut along
    the horizontal axis (see :func:`kneemri.resample.reslice_horizontal`).
    """

    case_id: str
    plane: str
    data: np.ndarray
    resliced: bool = False

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        if not isinstance(self.data, np.ndarray) or self.data.ndim != 3:
            raise ShapeError("volume data must be a 3-d array (slices, height, width)")
        if min(self.data.shape) < 1:
            raise ShapeError(f"degenerate volume shape {self.data.shape}")
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo}, max={hi}")

    @property
    def slices(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class LabelTable:
    """Binary labels for one task, keyed by case id."""

    task: str
    entries: dict

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        for case_id, label in self.entries.items():
            if label not in (0, 1):
                raise ValueError(f"label for {case_id!r} must be 0 or 1")


@dataclass
class DatasetManifest:
    """Cases present in all three planes of one split, plus file metadata."""

    root: Path
    split: str
    cases: list
    files: dict = field(default_factory=dict)          # case -> plane -> Path
    slice_counts: dict = field(default_factory=dict)   # case -> plane -> int
    excluded: list = field(default_factory=list)       # cases missing a plane

    def label_path(self, task: str) -> Path:
        return Path(self.root) / f"{self.split}-{task}.csv"


def _read_npy_header(f):
    """Parse an NPY v1.0 header, returning (descr, fortran_order, shape)."""
    magic = f.read(len(_MAGIC))
    if magic != _MAGIC:
        raise FormatError("not an NPY file (bad magic bytes)")
    version = f.read(2)
    if version != _VERSION:
        raise FormatError(f"unsupported NPY version {tuple(version)!r}, need (1, 0)")
    raw_len = f.read(2)
    if len(raw_len) != 2:
        raise FormatError("truncated NPY header length")
    (header_len,) = struct.unpack("<H", raw_len)
    header = f.read(header_len)
    if len(header) != header_len:
        raise FormatError("truncated NPY header")
    try:
        info = ast.literal_eval(header.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable NPY header: {exc}") from exc
    if not isinstance(info, dict) or set(info) != {"descr", "fortran_order", "shape"}:
        raise FormatError("NPY header must define exactly descr/fortran_order/shape")
    return info["descr"], info["fortran_order"], info["shape"]


def _check_volume_header(descr, fortran_order, shape):
    if fortran_order:
        raise ShapeError("Fortran-ordered volumes are not supported")
    if not (isinstance(shape, tuple) and len(shape) == 3
            and all(isinstance(d, int) for d in shape)):
        raise ShapeError(f"expected a 3-d shape, got {shape!r}")
    if descr not in _DESCRS:
        raise DtypeError(f"unsupported element type {descr!r}, need one of {sorted(_DESCRS)}")
    return np.dtype(descr)


def load_volume(path, case_id: str, plane: str) -> MriVolume:
    """Read one s x H x W NPY stack and rescale intensities to [0, 1]."""
    with open(path, "rb") as f:
        descr, fortran_order, shape = _read_npy_header(f)
        dtype = _check_volume_header(descr, fortran_order, shape)
        n_bytes = int(np.prod(shape)) * dtype.itemsize
        raw = f.read(n_bytes)
        if len(raw) != n_bytes:
            raise FormatError(f"expected {n_bytes} data bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    if dtype == np.uint8:
        data = arr.astype(np.float64) / 255.0
    else:
        data = np.clip(arr.astype(np.float64), 0.0, 1.0)
    return MriVolume(case_id=case_id, plane=plane, data=data)


def peek_slice_count(path) -> int:
    """Read the slice count from an NPY header without loading the data."""
    with open(path, "rb") as f:
        descr, fortran_order, shape = _read_npy_header(f)
        _check_volume_header(descr, fortran_order, shape)
    return shape[0]


def write_npy(path, array: np.ndarray) -> None:
    """Write a C-order NPY v1.0 file (uint8, float32 or float64 only)."""
    descr = {np.uint8: "|u1", np.float32: "<f4", np.float64: "<f8"}.get(array.dtype.type)
    if descr is None:
        raise DtypeError(f"cannot write dtype {array.dtype}")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %r, }" % (
        descr, tuple(int(d) for d in array.shape))
    # Pad with spaces so the whole preamble is 64-byte aligned, newline-terminated.
    preamble = len(_MAGIC) + 2 + 2
    pad = -(preamble + len(header) + 1) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(_VERSION)
        f.write(struct.pack("<H", len(header)))
        f.write(header.encode("latin1"))
        f.write(np.ascontiguousarray(array).tobytes())


def save_volume(path, vol: MriVolume) -> None:
    """Write a volume as a uint8 NPY stack (intensity = round(255 * x))."""
    write_npy(path, np.round(vol.data * 255.0).astype(np.uint8))


def load_labels(path, task: str) -> LabelTable:
    """Read a `case_id,label` CSV into a LabelTable; labels must be 0/1."""
    entries = {}
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected `case_id,label`, got {row!r}")
            case_id, raw = row[0].strip(), row[1].strip()
            if raw not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {raw!r}")
            if case_id in entries:
                raise IntegrityError(f"{path}:{lineno}: duplicate case id {case_id!r}")
            entries[case_id] = int(raw)
    return LabelTable(task=task, entries=entries)


def write_labels(path, table: LabelTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for case_id in table.entries:
            writer.writerow([case_id, table.entries[case_id]])


def scan_dataset(root, split: str = "train") -> DatasetManifest:
    """Build a manifest of the cases present in all three planes of a split.

    Cases missing any plane are excluded and reported in ``excluded``.
    Ordering is lexicographic by case id for reproducibility.
    """
    root = Path(root)
    split_dir = root / split
    if not split_dir.is_dir():
        raise LayoutError(f"missing split directory {split_dir}")
    per_plane = {}
    for plane in PLANES:
        plane_dir = split_dir / plane
        if not plane_dir.is_dir():
            raise LayoutError(f"missing plane directory {plane_dir}")
        per_plane[plane] = {p.stem: p for p in plane_dir.glob("*.npy")}
    complete = sorted(set.intersection(*(set(v) for v in per_plane.values())))
    everything = sorted(set.union(*(set(v) for v in per_plane.values())))
    excluded = [c for c in everything if c not in complete]
    files = {c: {plane: per_plane[plane][c] for plane in PLANES} for c in complete}
    slice_counts = {
        c: {plane: peek_slice_count(files[c][plane]) for plane in PLANES}
        for c in complete
    }
    return DatasetManifest(root=root, split=split, cases=complete, files=files,
                           slice_counts=slice_counts, excluded=excluded)
