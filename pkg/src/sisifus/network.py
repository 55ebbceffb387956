"""A small convolutional regression network in plain numpy.

Layers keep their forward caches and produce parameter gradients on
``backward``, so a training step is forward / loss / backward / optimizer.
Everything is float64 and strictly deterministic for a given seed: weight
initialization draws in a fixed order, and no threaded or order-ambiguous
reductions are used outside BLAS matmuls.

Convolutions are valid (no padding), stride 1, channels-last; im2col turns
them into matrix products and the backward pass folds the column gradients
back with a small loop over kernel offsets.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Conv2D:
    """Valid 2-D convolution with bias.  Weights are (kh, kw, cin, cout)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 4 or self.bias.shape != (self.weights.shape[3],):
            raise ValueError("Conv2D expects (kh, kw, cin, cout) weights and (cout,) bias")
        self._cols = None
        self._x_shape = None
        self.grad_weights = None
        self.grad_bias = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        kh, kw, cin, cout = self.weights.shape
        if x.ndim != 4 or x.shape[3] != cin:
            raise ValueError(f"Conv2D input must be (B, H, W, {cin}), got {x.shape}")
        windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
        # windows: (B, oh, ow, cin, kh, kw) -> columns (B*oh*ow, kh*kw*cin)
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
        b, oh, ow = cols.shape[:3]
        cols = cols.reshape(b * oh * ow, kh * kw * cin)
        out = cols @ self.weights.reshape(kh * kw * cin, cout) + self.bias
        self._cols, self._x_shape = cols, x.shape
        self._out_hw = (oh, ow)
        return out.reshape(b, oh, ow, cout)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        kh, kw, cin, cout = self.weights.shape
        b, h, w, _ = self._x_shape
        oh, ow = self._out_hw
        flat = grad_out.reshape(b * oh * ow, cout)
        self.grad_weights = (self._cols.T @ flat).reshape(kh, kw, cin, cout)
        self.grad_bias = flat.sum(axis=0)
        dcols = (flat @ self.weights.reshape(kh * kw * cin, cout).T)
        dcols = dcols.reshape(b, oh, ow, kh, kw, cin)
        dx = np.zeros((b, h, w, cin), dtype=np.float64)
        for di in range(kh):
            for dj in range(kw):
                dx[:, di:di + oh, dj:dj + ow, :] += dcols[:, :, :, di, dj, :]
        return dx

    @property
    def params(self):
        return [self.weights, self.bias]

    @property
    def grads(self):
        return [self.grad_weights, self.grad_bias]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)

    params = ()
    grads = ()


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)

    params = ()
    grads = ()


class Dense:
    """Fully connected layer.  Weights are (n_in, n_out)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("Dense expects (n_in, n_out) weights and (n_out,) bias")
        self._x = None
        self.grad_weights = None
        self.grad_bias = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weights + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.grad_weights = self._x.T @ grad_out
        self.grad_bias = grad_out.sum(axis=0)
        return grad_out @ self.weights.T

    @property
    def params(self):
        return [self.weights, self.bias]

    @property
    def grads(self):
        return [self.grad_weights, self.grad_bias]


class Network:
    """A plain layer pipeline."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(patch_side: int, in_channels: int, conv_filters, kernel_size: int,
                  dense_units, rng: np.random.Generator) -> Network:
    """Assemble the conv stack + dense head with fan-in-scaled uniform weights.

    Draw order is fixed (layer by layer, weights then bias) so a given seed
    always produces bit-identical parameters.
    """
    layers = []
    side, cin = patch_side, in_channels
    for cout in conv_filters:
        fan_in = kernel_size * kernel_size * cin
        w = _uniform_init(rng, (kernel_size, kernel_size, cin, cout), fan_in)
        b = _uniform_init(rng, (cout,), fan_in)
        layers += [Conv2D(w, b), ReLU()]
        side -= kernel_size - 1
        cin = cout
    layers.append(Flatten())
    n_in = side * side * cin
    for units in dense_units:
        w = _uniform_init(rng, (n_in, units), n_in)
        b = _uniform_init(rng, (units,), n_in)
        layers += [Dense(w, b), ReLU()]
        n_in = units
    w = _uniform_init(rng, (n_in, 1), n_in)
    b = _uniform_init(rng, (1,), n_in)
    layers.append(Dense(w, b))  # linear output head
    return Network(layers)


def mae_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its (sub)gradient with respect to ``pred``."""
    resid = pred - target
    loss = float(np.mean(np.abs(resid)))
    grad = np.sign(resid) / resid.size
    return loss, grad


class Adam:
    """Standard Adam with bias correction, acting on a fixed parameter list."""

    def __init__(self, params, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)
