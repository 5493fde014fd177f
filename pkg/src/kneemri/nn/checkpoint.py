"""Model checkpoints: version byte, length-prefixed config JSON, then raw
little-endian float32 blocks in declaration order (parameters followed by
batch-norm running statistics). Block shapes are a pure function of the
model config, so no per-block metadata is stored."""

import json
import struct
from dataclasses import asdict

import numpy as np

from ..errors import FormatError
from .network import ModelConfig, ResidualClassifier

FORMAT_VERSION = 1


def save_checkpoint(path, model: ResidualClassifier, meta: dict | None = None) -> None:
    header = {"model": asdict(model.config), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in model.state_arrays():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, meta)."""
    with open(path, "rb") as f:
        version = f.read(1)
        if len(version) != 1 or version[0] != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise FormatError("truncated checkpoint header")
        (blob_len,) = struct.unpack("<I", raw_len)
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise FormatError("truncated checkpoint config")
        try:
            header = json.loads(blob.decode("utf-8"))
            config = ModelConfig(**header["model"])
        except (ValueError, TypeError, KeyError) as exc:
            raise FormatError(f"bad checkpoint config: {exc}") from exc
        model = ResidualClassifier(config, np.random.default_rng(0))
        arrays = []
        for template in model.state_arrays():
            raw = f.read(template.size * 4)
            if len(raw) != template.size * 4:
                raise FormatError("truncated checkpoint data")
            arrays.append(np.frombuffer(raw, dtype="<f4").reshape(template.shape))
    model.load_state_arrays(arrays)
    return model, header.get("meta", {})
