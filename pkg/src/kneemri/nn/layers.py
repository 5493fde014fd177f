"""NumPy layers with explicit forward and backward passes.

Activations flow in NHWC layout so every convolution reduces to plain
matrix products: a k x k convolution is the sum of k*k shifted
(B*OH*OW, C) @ (C, F) multiplications, which keeps both passes exact and
BLAS-friendly without materializing im2col buffers.
"""

import numpy as np


class Parameter:
    """A named tensor with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


class Conv2d:
    """k x k convolution, stride s, symmetric zero padding, with bias.

    Weights are stored as (k, k, C_in, C_out) and drawn from the He
    scheme N(0, 2 / fan_in); biases start at zero.
    """

    def __init__(self, name, in_ch, out_ch, ksize, stride, padding, rng, dtype):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * ksize * ksize
        w = rng.standard_normal((ksize, ksize, in_ch, out_ch)) * np.sqrt(2.0 / fan_in)
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def buffers(self):
        return []

    def _geometry(self, h, w):
        k, s, p = self.ksize, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, train):
        b, h, w, _ = x.shape
        k, s, p = self.ksize, self.stride, self.padding
        oh, ow = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        y = np.broadcast_to(self.bias.value, (b * oh * ow, self.out_ch)).copy()
        for ki in range(k):
            for kj in range(k):
                patch = xp[:, ki:ki + s * oh:s, kj:kj + s * ow:s, :]
                y += patch.reshape(-1, self.in_ch) @ self.weight.value[ki, kj]
        if train:
            self._cache = (xp, (b, h, w, oh, ow))
        return y.reshape(b, oh, ow, self.out_ch)

    def backward(self, dy):
        xp, (b, h, w, oh, ow) = self._cache
        k, s, p = self.ksize, self.stride, self.padding
        dyf = dy.reshape(-1, self.out_ch)
        self.bias.grad += dyf.sum(axis=0)
        dxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                rows = slice(ki, ki + s * oh, s)
                cols = slice(kj, kj + s * ow, s)
                patch = xp[:, rows, cols, :].reshape(-1, self.in_ch)
                self.weight.grad[ki, kj] += patch.T @ dyf
                dxp[:, rows, cols, :] += (dyf @ self.weight.value[ki, kj].T).reshape(
                    b, oh, ow, self.in_ch)
        self._cache = None
        if p:
            return dxp[:, p:p + h, p:p + w, :]
        return dxp


class BatchNorm2d:
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes with batch statistics and updates running
    estimates (momentum 0.1, unbiased running variance); eval mode uses
    the running estimates.
    """

    def __init__(self, name, channels, dtype, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def set_buffers(self, arrays):
        self.running_mean, self.running_var = arrays

    def forward(self, x, train):
        if train:
            axes = (0, 1, 2)
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // x.shape[-1]
            correction = m / (m - 1) if m > 1 else 1.0
            mom = self.momentum
            self.running_mean = ((1 - mom) * self.running_mean + mom * mu).astype(x.dtype)
            self.running_var = ((1 - mom) * self.running_var
                                + mom * var * correction).astype(x.dtype)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv
            self._cache = (xhat, inv, m)
            return self.gamma.value * xhat + self.beta.value
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return self.gamma.value * (x - self.running_mean) * inv + self.beta.value

    def backward(self, dy):
        xhat, inv, m = self._cache
        axes = (0, 1, 2)
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        dx = (self.gamma.value * inv) * (dy - dbeta / m - xhat * (dgamma / m))
        self._cache = None
        return dx


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, train):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        dx = dy * self._mask
        self._mask = None
        return dx


class GlobalAvgPool:
    """Mean over the spatial axes: (B, H, W, C) -> (B, C)."""

    def __init__(self):
        self._shape = None

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, train):
        if train:
            self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        b, h, w, c = self._shape
        self._shape = None
        return np.broadcast_to(dy[:, None, None, :] / (h * w), (b, h, w, c)).copy()


class Linear:
    def __init__(self, name, in_features, out_features, rng, dtype):
        w = rng.standard_normal((in_features, out_features)) * np.sqrt(2.0 / in_features)
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def buffers(self):
        return []

    def forward(self, x, train):
        if train:
            self._x = x
        # einsum keeps each row's reduction order fixed, so a logit never
        # depends on where its example sits in the batch
        return np.einsum("bi,io->bo", x, self.weight.value) + self.bias.value

    def backward(self, dy):
        self.weight.grad += self._x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        dx = dy @ self.weight.value.T
        self._x = None
        return dx


class ResidualBlock:
    """Two 3x3 convolutions with batch norm each, identity skip, and a
    1x1 projection (with its own batch norm) when channels or stride
    change."""

    def __init__(self, name, in_ch, out_ch, stride, rng, dtype):
        self.conv1 = Conv2d(f"{name}.conv1", in_ch, out_ch, 3, stride, 1, rng, dtype)
        self.bn1 = BatchNorm2d(f"{name}.bn1", out_ch, dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(f"{name}.conv2", out_ch, out_ch, 3, 1, 1, rng, dtype)
        self.bn2 = BatchNorm2d(f"{name}.bn2", out_ch, dtype)
        self.relu2 = ReLU()
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(f"{name}.proj", in_ch, out_ch, 1, stride, 0, rng, dtype)
            self.proj_bn = BatchNorm2d(f"{name}.proj_bn", out_ch, dtype)
        else:
            self.proj = None
            self.proj_bn = None

    def _sublayers(self):
        layers = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2, self.relu2]
        if self.proj is not None:
            layers.extend([self.proj, self.proj_bn])
        return layers

    def params(self):
        return [p for layer in self._sublayers() for p in layer.params()]

    def buffers(self):
        return [b for layer in self._sublayers() for b in layer.buffers()]

    def forward(self, x, train):
        if self.proj is not None:
            shortcut = self.proj_bn.forward(self.proj.forward(x, train), train)
        else:
            shortcut = x
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train), train)
        h = self.bn2.forward(self.conv2.forward(h, train), train)
        return self.relu2.forward(h + shortcut, train)

    def backward(self, dy):
        d = self.relu2.backward(dy)
        dmain = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.conv2.backward(self.bn2.backward(d)))))
        if self.proj is not None:
            dshort = self.proj.backward(self.proj_bn.backward(d))
        else:
            dshort = d
        return dmain + dshort
