"""A compact residual classifier assembled from the numpy layers.

The backbone is three stages of residual blocks at stem_filters x
(1, 2, 4) channels. The stem is a single 3x3 convolution (stride 2 by
default so a 64 px input runs at desk-scale cost); stages 2 and 3
downsample by stride 2. Global average pooling feeds one affine head
emitting one logit per task.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .layers import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, ReLU, ResidualBlock
from .loss import sigmoid

AGGREGATIONS = ("max_over_slices", "stacked_channels")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    out_tasks: int = 1
    stem_filters: int = 16
    stage_blocks: int = 2
    input_size: int = 64
    aggregation: str = "max_over_slices"
    stem_stride: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.in_channels not in (1, 3, 45):
            raise ConfigError(f"in_channels must be 1, 3 or 45, got {self.in_channels}")
        if self.out_tasks not in (1, 3):
            raise ConfigError(f"out_tasks must be 1 or 3, got {self.out_tasks}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "stacked_channels" and self.in_channels != 45:
            raise ConfigError("stacked_channels aggregation requires in_channels=45")
        if self.stem_filters < 1 or self.stage_blocks < 1 or self.input_size < 8:
            raise ConfigError("stem_filters/stage_blocks/input_size out of range")
        if self.stem_stride not in (1, 2):
            raise ConfigError("stem_stride must be 1 or 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def stage_channels(self):
        return (self.stem_filters, self.stem_filters * 2, self.stem_filters * 4)


class ResidualClassifier:
    """Forward/backward residual CNN; parameters in declaration order."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        dtype = np.dtype(config.dtype)
        self.stem = Conv2d("stem", config.in_channels, config.stem_filters, 3,
                           config.stem_stride, 1, rng, dtype)
        self.stem_bn = BatchNorm2d("stem_bn", config.stem_filters, dtype)
        self.stem_relu = ReLU()
        self.blocks = []
        in_ch = config.stem_filters
        for stage, out_ch in enumerate(config.stage_channels()):
            for b in range(config.stage_blocks):
                stride = 2 if stage > 0 and b == 0 else 1
                self.blocks.append(ResidualBlock(f"stage{stage + 1}.block{b + 1}",
                                                 in_ch, out_ch, stride, rng, dtype))
                in_ch = out_ch
        self.pool = GlobalAvgPool()
        self.head = Linear("head", in_ch, config.out_tasks, rng, dtype)
        self._layers = [self.stem, self.stem_bn, self.stem_relu, *self.blocks,
                        self.pool, self.head]

    def params(self):
        return [p for layer in self._layers for p in layer.params()]

    def zero_grads(self):
        for p in self.params():
            p.grad[...] = 0

    def bn_layers(self):
        out = [self.stem_bn]
        for block in self.blocks:
            out.extend([block.bn1, block.bn2])
            if block.proj_bn is not None:
                out.append(block.proj_bn)
        return out

    def state_arrays(self):
        """Parameters then batch-norm running stats, in declaration order."""
        arrays = [p.value for p in self.params()]
        for bn in self.bn_layers():
            arrays.extend(bn.buffers())
        return arrays

    def load_state_arrays(self, arrays):
        expected = self.state_arrays()
        if len(arrays) != len(expected):
            raise ShapeError(f"expected {len(expected)} state blocks, got {len(arrays)}")
        params = self.params()
        dtype = np.dtype(self.config.dtype)
        for p, arr in zip(params, arrays[:len(params)]):
            if arr.shape != p.value.shape:
                raise ShapeError(f"block {p.name} shape {arr.shape} != {p.value.shape}")
            p.value = arr.astype(dtype)
            p.grad = np.zeros_like(p.value)
        it = iter(arrays[len(params):])
        for bn in self.bn_layers():
            bn.set_buffers([next(it).astype(dtype), next(it).astype(dtype)])

    def snapshot(self):
        return [arr.copy() for arr in self.state_arrays()]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Batch of B x C x H x W inputs -> B x out_tasks logits."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected (B, {cfg.in_channels}, H, W), got {x.shape}")
        h = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=np.dtype(cfg.dtype))
        for layer in self._layers:
            h = layer.forward(h, train)
        return h

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients for the last train-mode forward."""
        d = dlogits.astype(np.dtype(self.config.dtype))
        for layer in reversed(self._layers):
            d = layer.backward(d)


def init_model(config: ModelConfig, rng: np.random.Generator) -> ResidualClassifier:
    """From-scratch initialization: He-scaled convolution weights, zero
    biases, unit batch-norm scale. Deterministic per generator state."""
    return ResidualClassifier(config, rng)


def predict_volume_max(model: ResidualClassifier, prepared: np.ndarray) -> float:
    """Exam probability = max over per-slice probabilities (eval mode).

    ``prepared`` is the s x C x H x W stack of slices already channel
    prepared for the model. Slices run through the network one at a time
    so the result is exactly the max of s independent forward calls;
    sigmoid is monotone, so that equals the sigmoid of the max logit.
    Ties break toward the lowest slice index.
    """
    if model.config.out_tasks != 1:
        raise ConfigError("max-over-slices aggregation needs a single-task head")
    if prepared.ndim != 4 or prepared.shape[0] == 0:
        raise ValueError("expected a non-empty s x C x H x W stack")
    best = None
    for i in range(prepared.shape[0]):
        z = float(model.forward(prepared[i:i + 1], train=False)[0, 0])
        if best is None or z > best:
            best = z
    return float(sigmoid(best))


def predict_multi(model: ResidualClassifier, stacked: np.ndarray) -> np.ndarray:
    """Independent per-task probabilities for one stacked-channel input."""
    if stacked.ndim != 4:
        raise ShapeError(f"expected (1, C, H, W), got shape {stacked.shape}")
    logits = model.forward(stacked, train=False)
    return sigmoid(logits[0])
