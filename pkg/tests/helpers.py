"""Independent oracles shared by the unit and acceptance suites."""

import numpy as np

from fedln.models import Mlp, loss_and_gradients


def flatten_model(model):
    return np.concatenate([w.ravel() for w in model.weights]
                          + [b.ravel() for b in model.biases])


def flat_weighted_mean(models, weights):
    """Flat-vector weighted parameter mean, independent of the engine."""
    return sum(w * flatten_model(m) for w, m in zip(weights, models))


def model_from_flat(sizes, flat):
    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
    for fan_out in sizes[1:]:
        biases.append(flat[offset:offset + fan_out])
        offset += fan_out
    return Mlp(tuple(sizes), tuple(weights), tuple(biases))


def central_difference_gradient(sizes, flat, x, y, mix, teacher, step=1e-5):
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        loss_up, _, _ = loss_and_gradients(model_from_flat(sizes, up), x, y, mix, teacher)
        loss_down, _, _ = loss_and_gradients(model_from_flat(sizes, down), x, y, mix, teacher)
        grad[i] = (loss_up - loss_down) / (2 * step)
    return grad
