"""Neural-network layers with explicit forward/backward passes.

Everything runs on plain numpy arrays in NHWC layout. Each layer caches
what its backward pass needs during forward, so the usage pattern is the
classic one: forward the batch, compute a loss gradient, then walk the
layers in reverse. Parameters and their gradients are exposed as
name -> array dicts so an optimizer can treat the whole model uniformly.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class Layer:
    """Base class: parameter-free, shape-preserving by default."""

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        """Non-trainable buffers (e.g. batch-norm running statistics)."""
        return {}

    def set_params(self, values: dict):
        """Write arrays back into this layer's parameter/state slots."""
        for key in list(self.params()) + list(self.state()):
            if key in values:
                current = getattr(self, key)
                arr = np.asarray(values[key], dtype=current.dtype).reshape(current.shape)
                setattr(self, key, arr.copy())


class Conv2D(Layer):
    """3x3 convolution, stride 1, SAME padding.

    Implemented as nine shifted GEMMs against the padded input, which keeps
    peak memory low and hands all the arithmetic to BLAS.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, dtype=np.float32):
        fan_in = 9 * in_ch
        limit = np.sqrt(6.0 / fan_in)  # He-uniform
        self.kernel = rng.uniform(-limit, limit, size=(3, 3, in_ch, out_ch)).astype(dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.dkernel = None
        self.dbias = None
        self._xp = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.kernel.shape[2]:
            raise ShapeMismatch(
                f"conv expects (N,H,W,{self.kernel.shape[2]}), got {x.shape}"
            )
        n, h, w, cin = x.shape
        cout = self.kernel.shape[3]
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        self._xp = xp
        y = np.broadcast_to(self.bias, (n * h * w, cout)).copy()
        for ki in range(3):
            for kj in range(3):
                patch = xp[:, ki : ki + h, kj : kj + w, :].reshape(-1, cin)
                y += patch @ self.kernel[ki, kj]
        return y.reshape(n, h, w, cout)

    def backward(self, dy):
        xp = self._xp
        n, hp, wp, cin = xp.shape
        h, w = hp - 2, wp - 2
        cout = self.kernel.shape[3]
        dyf = dy.reshape(-1, cout)
        self.dbias = dyf.sum(axis=0)
        self.dkernel = np.empty_like(self.kernel)
        dxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                patch = xp[:, ki : ki + h, kj : kj + w, :].reshape(-1, cin)
                self.dkernel[ki, kj] = patch.T @ dyf
                dxp[:, ki : ki + h, kj : kj + w, :] += (dyf @ self.kernel[ki, kj].T).reshape(
                    n, h, w, cin
                )
        return dxp[:, 1 : 1 + h, 1 : 1 + w, :]

    def params(self):
        return {"kernel": self.kernel, "bias": self.bias}

    def grads(self):
        return {"kernel": self.dkernel, "bias": self.dbias}


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with batch statistics and refreshes the
    running estimates; eval mode uses the running estimates only.
    """

    def __init__(self, channels: int, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.dgamma = None
        self.dbeta = None
        self._cache = None

    def forward(self, x, training=False, rng=None):
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (
                self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            ).astype(self.running_mean.dtype)
            self.running_var = (
                self.momentum * self.running_var + (1.0 - self.momentum) * var
            ).astype(self.running_var.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv.astype(x.dtype), training)
        return (self.gamma * xhat + self.beta).astype(x.dtype)

    def backward(self, dy):
        xhat, inv, trained = self._cache
        axes = tuple(range(dy.ndim - 1))
        self.dgamma = (dy * xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        if not trained:
            # running stats are constants, so the pass is a plain affine map
            return dy * self.gamma * inv
        m = dy.size // dy.shape[-1]
        dxhat = dy * self.gamma
        return (
            inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        ).astype(dy.dtype)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2 and SAME padding (odd edges padded)."""

    def forward(self, x, training=False, rng=None):
        n, h, w, c = x.shape
        ho, wo = (h + 1) // 2, (w + 1) // 2
        self._in_shape = x.shape
        if h % 2 or w % 2:
            x = np.pad(
                x,
                ((0, 0), (0, 2 * ho - h), (0, 2 * wo - w), (0, 0)),
                constant_values=-np.inf,
            )
        windows = (
            x.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
        )
        self._argmax = windows.argmax(axis=-1)
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, h, w, c = self._in_shape
        ho, wo = (h + 1) // 2, (w + 1) // 2
        dwin = np.zeros((n, ho, wo, c, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, self._argmax[..., None], dy[..., None], axis=-1)
        dxp = (
            dwin.reshape(n, ho, wo, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, 2 * ho, 2 * wo, c)
        )
        return dxp[:, :h, :w, :]


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        limit = np.sqrt(6.0 / (in_dim + out_dim))  # Glorot-uniform
        self.w = rng.uniform(-limit, limit, size=(in_dim, out_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.dw = None
        self.db = None

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeMismatch(f"dense expects (N,{self.w.shape[0]}), got {x.shape}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        self.dw = self._x.T @ dy
        self.db = dy.sum(axis=0)
        return dy @ self.w.T

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}


class ScaleShift(Layer):
    """Fixed elementwise ``x * scale + shift``; no trainable parameters.

    Used as the output stage of the regression head: the shift pins the
    rest point (identity parameters / centered corners) and the scale sets
    each output's natural step size under a uniform optimizer.
    """

    def __init__(self, scale, shift):
        self.scale = np.asarray(scale, dtype=np.float64)
        self.shift = np.asarray(shift, dtype=np.float64)

    def forward(self, x, training=False, rng=None):
        return (x * self.scale + self.shift).astype(x.dtype)

    def backward(self, dy):
        return (dy * self.scale).astype(dy.dtype)


class Dropout(Layer):
    """Inverted dropout; identity when rate is 0 or in eval mode."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class Sequential(Layer):
    """A named chain of layers; parameter names are dotted paths."""

    def __init__(self, named_layers: list[tuple[str, Layer]]):
        self.named_layers = list(named_layers)

    def forward(self, x, training=False, rng=None):
        for _, layer in self.named_layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.named_layers):
            dy = layer.backward(dy)
        return dy

    def _collect(self, getter):
        out = {}
        for name, layer in self.named_layers:
            for key, val in getter(layer).items():
                out[f"{name}.{key}"] = val
        return out

    def params(self):
        return self._collect(lambda l: l.params())

    def grads(self):
        return self._collect(lambda l: l.grads())

    def state(self):
        return self._collect(lambda l: l.state())

    def set_params(self, values: dict):
        for name, layer in self.named_layers:
            prefix = name + "."
            sub = {k[len(prefix) :]: v for k, v in values.items() if k.startswith(prefix)}
            if sub:
                layer.set_params(sub)


class ResidualBlock(Layer):
    """Identity shortcut around a double conv group: x + f(x).

    The inner path is conv-bn-relu-conv-bn-relu with matching channel
    counts, so the addition needs no projection.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.body = Sequential(
            [
                ("conv1", Conv2D(channels, channels, rng, dtype)),
                ("bn1", BatchNorm(channels, dtype)),
                ("relu1", ReLU()),
                ("conv2", Conv2D(channels, channels, rng, dtype)),
                ("bn2", BatchNorm(channels, dtype)),
                ("relu2", ReLU()),
            ]
        )

    def forward(self, x, training=False, rng=None):
        return x + self.body.forward(x, training=training, rng=rng)

    def backward(self, dy):
        return dy + self.body.backward(dy)

    def params(self):
        return self.body.params()

    def grads(self):
        return self.body.grads()

    def state(self):
        return self.body.state()

    def set_params(self, values: dict):
        self.body.set_params(values)
