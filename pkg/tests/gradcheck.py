"""Finite-difference gradient checking helpers shared by the test modules.

Central differences on a piecewise-linear network are only a valid
measurement when no ReLU pre-activation sits within the perturbation
window: a unit whose pre-activation is below the step size flips sign
inside the difference and corrupts every upstream estimate. The drawing
helper therefore resamples the input batch until the smallest pre-ReLU
magnitude clears a safety margin; the comparison itself always runs at
the full step and tolerance.
"""

import numpy as np

from kneemri.nn import init_model, weighted_bce


def mean_loss_gradients(model, x, y, w):
    """Analytic gradient of the mean weighted BCE over all logit entries."""
    logits = model.forward(x, train=True)
    losses, dz = weighted_bce(logits, y, w)
    model.zero_grads()
    model.backward(dz / dz.size)
    return float(losses.mean())


def min_relu_margin(model, x):
    """Smallest |pre-activation| seen by any ReLU during one forward."""
    relus = [model.stem_relu]
    for block in model.blocks:
        relus.extend([block.relu1, block.relu2])
    margins = []
    originals = [r.forward for r in relus]

    def wrap(orig):
        def fwd(h, train):
            margins.append(float(np.abs(h).min()))
            return orig(h, train)
        return fwd

    for r in relus:
        r.forward = wrap(r.forward)
    try:
        model.forward(x, train=True)
    finally:
        for r, orig in zip(relus, originals):
            r.forward = orig
    return min(margins)


def draw_checkable_case(config, seed, batch=4, step=1e-4, margin=4.0,
                        max_tries=50):
    """A random model plus an input batch that keeps every ReLU at least
    margin * step away from its kink, so the fd measurement is valid."""
    rng = np.random.default_rng(seed)
    model = init_model(config, rng)
    for _ in range(max_tries):
        x = rng.random((batch, config.in_channels, config.input_size,
                        config.input_size))
        if min_relu_margin(model, x) > margin * step:
            y = rng.integers(0, 2, (batch, config.out_tasks)).astype(float)
            w = rng.uniform(0.5, 2.0, (batch, config.out_tasks))
            return model, x, y, w
    raise RuntimeError(f"no kink-free batch found for seed {seed}")


def finite_diff_max_rel_error(model, x, y, w, step=1e-4, floor=1e-3):
    """Max relative error of analytic vs central-difference gradients.

    The floor keeps the ratio meaningful where both gradients are tiny:
    below it the test effectively demands absolute error < tol * floor,
    still far above the O(step^2) truncation noise of the difference.
    """

    def loss_fn():
        logits = model.forward(x, train=True)
        losses, _ = weighted_bce(logits, y, w)
        return float(losses.mean())

    mean_loss_gradients(model, x, y, w)
    worst = 0.0
    for p in model.params():
        flat = p.value.reshape(-1)
        grads = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(grads[i] - fd) / max(floor, abs(grads[i]), abs(fd))
            worst = max(worst, rel)
    return worst
