"""Adam with bias correction and decoupled weight decay."""

import numpy as np

from ..errors import OptimizerError


class Adam:
    """theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.

    A step with any non-finite gradient is refused before touching state.
    """

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise OptimizerError(f"non-finite gradient in {p.name}; step refused")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.value
            p.value = p.value - update

    def zero_grads(self):
        for p in self.params:
            p.grad[...] = 0
