"""Minimal dense-network pieces with explicit gradients (float64 throughout)."""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(logits, targets, class_weights):
    """Class-weighted mean cross-entropy and its gradient w.r.t. ``logits``.

    The mean is normalised by the summed weights of the batch targets.
    """
    targets = np.asarray(targets)
    probs = softmax(logits)
    w = np.asarray(class_weights, dtype=np.float64)[targets]
    wsum = w.sum()
    rows = np.arange(len(targets))
    nll = -np.log(np.clip(probs[rows, targets], 1e-300, None))
    loss = float((w * nll).sum() / wsum)
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    grad *= (w / wsum)[:, None]
    return loss, grad, wsum


def glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


class SGD:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, lr, momentum=0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._vel = {}

    def step(self, params, grads):
        for name, g in grads.items():
            v = self._vel.get(name)
            v = -self.lr * g if v is None else self.momentum * v - self.lr * g
            self._vel[name] = v
            params[name] += v


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self._m, self._v, self._t = {}, {}, 0

    def step(self, params, grads):
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self._m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self._v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self._m[name], self._v[name] = m, v
            mhat = m / (1 - b1 ** self._t)
            vhat = v / (1 - b2 ** self._t)
            params[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name, lr, momentum=0.9):
    if name == "sgd":
        return SGD(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
